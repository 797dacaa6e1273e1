#include "gcnn/graph.hpp"

#include <algorithm>
#include <cstdlib>
#include <ostream>
#include <string>
#include <utility>

#include "gcnn/error.hpp"

namespace gcnn {
namespace {

std::size_t clipped_span(std::size_t center, std::size_t radius, std::size_t extent) {
  const std::size_t lo = center >= radius ? center - radius : 0;
  const std::size_t hi = std::min(extent - 1, center + radius);
  return hi - lo + 1;
}

template <class T>
using Candidate = std::pair<T, std::uint32_t>;

template <class T>
bool closer(const Candidate<T>& a, const Candidate<T>& b) {
  return a.first < b.first || (a.first == b.first && a.second < b.second);
}

}  // namespace

void NlgConfig::validate() const {
  if (exclusion_radius >= window_radius)
    throw ConfigError("nlg: exclusion_radius (" + std::to_string(exclusion_radius) +
                      ") must be smaller than window_radius (" + std::to_string(window_radius) +
                      ")");
  const std::size_t side = 2 * window_radius + 1, excl = 2 * exclusion_radius + 1;
  if (side * side - excl * excl < k)
    throw ConfigError("nlg: a full search window holds only " +
                      std::to_string(side * side - excl * excl) +
                      " eligible pixels, fewer than k = " + std::to_string(k));
}

std::size_t NlgConfig::min_eligible(std::size_t height, std::size_t width) const {
  std::size_t best = static_cast<std::size_t>(-1);
  for (std::size_t r = 0; r < height; ++r) {
    const std::size_t wr = clipped_span(r, window_radius, height);
    const std::size_t er = clipped_span(r, exclusion_radius, height);
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t n = wr * clipped_span(c, window_radius, width) -
                            er * clipped_span(c, exclusion_radius, width);
      best = std::min(best, n);
    }
  }
  return best;
}

void NlgConfig::check_viable(std::size_t height, std::size_t width) const {
  validate();
  if (height == 0 || width == 0) throw SizingError("nlg: empty image");
  if (k == 0) return;
  const std::size_t n = min_eligible(height, width);
  if (n < k)
    throw SizingError("nlg: a " + std::to_string(height) + "x" + std::to_string(width) +
                      " grid leaves only " + std::to_string(n) +
                      " eligible pixels for some pixel, fewer than k = " + std::to_string(k) +
                      "; use a larger image or tile, a larger window radius, or a smaller k");
}

void NonLocalGraph::dump(std::ostream& os) const {
  for (std::size_t i = 0; i < pixels(); ++i) {
    os << i << ':';
    for (auto j : neighbors(i)) os << ' ' << j;
    os << '\n';
  }
}

template <class T>
NonLocalGraph build_knn_graph(FeatureView<T> f, const NlgConfig& cfg) {
  if (f.channels == 0) throw ShapeError("build_knn_graph: features need at least one channel");
  cfg.check_viable(f.height, f.width);
  const std::size_t h = f.height, w = f.width, c = f.channels, hw = h * w;
  NonLocalGraph graph(h, w, cfg.k);
  if (cfg.k == 0) return graph;

  std::vector<T> pix(hw * c);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i) pix[i * c + ch] = f.data[ch * hw + i];

  const long R = static_cast<long>(cfg.window_radius);
  const long E = static_cast<long>(cfg.exclusion_radius);
  std::vector<Candidate<T>> cand;
  cand.reserve((2 * cfg.window_radius + 1) * (2 * cfg.window_radius + 1));
  for (long r = 0; r < static_cast<long>(h); ++r) {
    for (long col = 0; col < static_cast<long>(w); ++col) {
      const std::size_t i = static_cast<std::size_t>(r) * w + static_cast<std::size_t>(col);
      const T* pi = pix.data() + i * c;
      cand.clear();
      const long r0 = std::max(0L, r - R), r1 = std::min(static_cast<long>(h) - 1, r + R);
      const long c0 = std::max(0L, col - R), c1 = std::min(static_cast<long>(w) - 1, col + R);
      for (long rr = r0; rr <= r1; ++rr) {
        const bool row_near = std::abs(rr - r) <= E;
        for (long cc = c0; cc <= c1; ++cc) {
          if (row_near && std::abs(cc - col) <= E) continue;
          const std::size_t j = static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc);
          const T* pj = pix.data() + j * c;
          T d{0};
          for (std::size_t ch = 0; ch < c; ++ch) {
            const T diff = pj[ch] - pi[ch];
            d += diff * diff;
          }
          cand.emplace_back(d, static_cast<std::uint32_t>(j));
        }
      }
      std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(cfg.k), cand.end(),
                        closer<T>);
      auto out = graph.neighbors(i);
      for (std::size_t n = 0; n < cfg.k; ++n) out[n] = cand[n].second;
    }
  }
  return graph;
}

template <class T>
NonLocalGraph brute_force_knn(FeatureView<T> f, const NlgConfig& cfg) {
  if (f.channels == 0) throw ShapeError("brute_force_knn: features need at least one channel");
  cfg.check_viable(f.height, f.width);
  const std::size_t h = f.height, w = f.width, hw = h * w;
  NonLocalGraph graph(h, w, cfg.k);
  if (cfg.k == 0) return graph;
  const long R = static_cast<long>(cfg.window_radius);
  const long E = static_cast<long>(cfg.exclusion_radius);
  for (std::size_t i = 0; i < hw; ++i) {
    const long ri = static_cast<long>(i / w), ci = static_cast<long>(i % w);
    std::vector<Candidate<T>> all;
    for (std::size_t j = 0; j < hw; ++j) {
      const long dr = std::abs(static_cast<long>(j / w) - ri);
      const long dc = std::abs(static_cast<long>(j % w) - ci);
      if (dr > R || dc > R) continue;
      if (dr <= E && dc <= E) continue;
      T d{0};
      for (std::size_t ch = 0; ch < f.channels; ++ch) {
        const T diff = f.data[ch * hw + j] - f.data[ch * hw + i];
        d += diff * diff;
      }
      all.emplace_back(d, static_cast<std::uint32_t>(j));
    }
    std::sort(all.begin(), all.end(), closer<T>);
    auto out = graph.neighbors(i);
    for (std::size_t n = 0; n < cfg.k; ++n) out[n] = all[n].second;
  }
  return graph;
}

template NonLocalGraph build_knn_graph<float>(FeatureView<float>, const NlgConfig&);
template NonLocalGraph build_knn_graph<double>(FeatureView<double>, const NlgConfig&);
template NonLocalGraph brute_force_knn<float>(FeatureView<float>, const NlgConfig&);
template NonLocalGraph brute_force_knn<double>(FeatureView<double>, const NlgConfig&);

}  // namespace gcnn
