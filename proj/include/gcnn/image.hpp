#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gcnn/rng.hpp"
#include "gcnn/tensor.hpp"

namespace gcnn {

// Grayscale image with intensities nominally in [0,1]; 8-bit files map v/255.
struct GrayImage {
  std::size_t height = 0, width = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}

  float at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
  float& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

// Binary PGM (P5, maxval 255) or 8-bit grayscale PNG, detected by content.
GrayImage load_image(const std::string& path);
GrayImage decode_image(const std::vector<std::uint8_t>& bytes, const std::string& name);
// Writes PNG for a ".png" extension, P5 otherwise. Pixels are clamped to
// [0,1], scaled by 255 and rounded half away from zero.
void save_image(const GrayImage& img, const std::string& path);
std::vector<std::uint8_t> encode_pgm(const GrayImage& img);
std::vector<std::uint8_t> encode_png(const GrayImage& img);

std::vector<std::uint8_t> quantize(const GrayImage& img);
GrayImage clamped(const GrayImage& img);
GrayImage crop(const GrayImage& img, std::size_t row, std::size_t col, std::size_t h, std::size_t w);

template <class T>
Tensor<T> to_tensor(std::span<const GrayImage> images);  // [N,1,H,W]; equal sizes required
template <class T>
GrayImage from_tensor(const Tensor<T>& t, std::size_t index = 0);

struct NoiseConfig {
  double sigma = 25.0;  // on the 0..255 scale
  std::uint64_t seed = 0;
};

// pixel + (sigma/255) * g with g drawn in raster order from
// CounterRng(cfg.seed).gaussian(). The result is not clamped.
GrayImage add_awgn(const GrayImage& img, const NoiseConfig& cfg);

struct PatchRef {
  std::size_t image = 0, row = 0, col = 0;
  friend bool operator==(const PatchRef&, const PatchRef&) = default;
};

struct PatchSet {
  std::size_t size = 32;
  std::size_t stride = 32;
  std::vector<PatchRef> patches;
};

// Row-major enumeration of top-left corners at the given stride.
PatchSet extract_patches(std::span<const GrayImage> images, std::size_t size, std::size_t stride);
// Seeded Fisher-Yates over the patch list: for i = n-1 .. 1 swap i with
// CounterRng(seed).index(i + 1).
std::vector<PatchRef> iterate(const PatchSet& set, std::uint64_t shuffle_seed);

// Plain-text list of image paths, one per line, "#" comments; relative
// paths resolve against the manifest's directory.
std::vector<std::string> read_manifest(const std::string& path);

// Deterministic piecewise-smooth test image (gradients, shapes, stripes).
GrayImage make_synthetic_image(std::uint64_t seed, std::size_t height, std::size_t width);

}  // namespace gcnn
