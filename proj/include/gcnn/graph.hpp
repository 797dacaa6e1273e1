#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace gcnn {

// Non-local neighbor selection parameters.
struct NlgConfig {
  std::size_t k = 8;
  // Search window is the (2r+1)x(2r+1) block centred on the pixel, clipped
  // at the borders.
  std::size_t window_radius = 16;
  // Pixels with |dr| <= e and |dc| <= e (self included) are never selected.
  std::size_t exclusion_radius = 1;

  void validate() const;
  // Fewest eligible candidates any pixel of an h x w grid sees (a corner).
  std::size_t min_eligible(std::size_t height, std::size_t width) const;
  // Throws SizingError if some pixel of an h x w grid has fewer than k
  // eligible candidates.
  void check_viable(std::size_t height, std::size_t width) const;

  friend bool operator==(const NlgConfig&, const NlgConfig&) = default;
};

// Per-pixel neighbor lists over an h x w grid, row-major pixel indices,
// exactly k entries per pixel, ascending by feature distance.
class NonLocalGraph {
 public:
  NonLocalGraph() = default;
  NonLocalGraph(std::size_t height, std::size_t width, std::size_t k)
      : height_(height), width_(width), k_(k), neighbors_(height * width * k) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t k() const { return k_; }
  std::size_t pixels() const { return height_ * width_; }

  std::span<const std::uint32_t> neighbors(std::size_t pixel) const {
    return {neighbors_.data() + pixel * k_, k_};
  }
  std::span<std::uint32_t> neighbors(std::size_t pixel) {
    return {neighbors_.data() + pixel * k_, k_};
  }

  // One line per pixel: "i: j1 j2 ... jk".
  void dump(std::ostream& os) const;

  friend bool operator==(const NonLocalGraph&, const NonLocalGraph&) = default;

 private:
  std::size_t height_ = 0, width_ = 0, k_ = 0;
  std::vector<std::uint32_t> neighbors_;
};

// Channel-major view of one [C,H,W] feature map.
template <class T>
struct FeatureView {
  const T* data;
  std::size_t channels, height, width;
};

// Windowed k-nearest-neighbor selection in feature space; ties are broken
// by ascending raster index.
template <class T>
NonLocalGraph build_knn_graph(FeatureView<T> features, const NlgConfig& cfg);

// Exhaustive O(N^2) reference with the same eligibility and tie rules.
template <class T>
NonLocalGraph brute_force_knn(FeatureView<T> features, const NlgConfig& cfg);

}  // namespace gcnn
