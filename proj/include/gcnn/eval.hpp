#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcnn/checkpoint.hpp"
#include "gcnn/gc_layer.hpp"
#include "gcnn/gradcheck.hpp"
#include "gcnn/image.hpp"
#include "gcnn/network.hpp"
#include "gcnn/train.hpp"

namespace gcnn {

// 10 log10(1 / MSE) with the test image clamped to [0,1]; +infinity when the
// images agree exactly.
double psnr(const GrayImage& clean, const GrayImage& test);
std::string format_psnr(double db);

struct TileOptions {
  bool enabled = false;
  std::size_t tile = 96;
  std::size_t overlap = 16;
};

// Inference on one image; tiles are averaged where they overlap. The result
// is clamped to [0,1].
GrayImage denoise_image(Model<float>& model, const GrayImage& noisy, const TileOptions& tiling = {});

// Masks of input pixels reachable from (row, col) through graph layers
// 1..upto_layer, where layer 1 is the first preprocessing graph layer and
// the trunk layers follow in execution order. One mask per layer.
struct ReceptiveTrace {
  std::vector<std::string> layer_names;
  std::vector<Mask> masks;
};
ReceptiveTrace trace_receptive_field(Model<float>& model, const GrayImage& image, std::size_t row,
                                     std::size_t col, std::size_t upto_layer);
GrayImage mask_image(const Mask& mask);  // 0 / 1 intensities

std::string hex_digest(std::uint64_t h);
std::string content_digest(const std::vector<std::uint8_t>& bytes);

struct EvalRow {
  std::string image;
  double psnr_noisy = 0.0;
  double psnr_denoised = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double average_noisy = 0.0;
  double average_denoised = 0.0;
  std::string config_digest;
  std::string checkpoint_digest;
  double wall_seconds = 0.0;

  // Header line, one row per image, an "average" row, then "#"-prefixed
  // provenance lines.
  std::string to_tsv() const;
};

struct EvalOptions {
  double sigma = 25.0;
  std::uint64_t seed = 1;  // noise for image i: substream "eval_noise" {i}
  TileOptions tiling;
};

std::vector<GrayImage> eval_noisy(const std::vector<GrayImage>& clean, const EvalOptions& opt);

EvalReport evaluate(const Checkpoint& ck, const std::vector<GrayImage>& clean,
                    const std::vector<std::string>& names, const EvalOptions& opt);

// Throws ConfigError when the two runs differ in anything other than nlg.k.
void check_ablation_pair(const NetworkConfig& a, const TrainConfig& ta, const NetworkConfig& b,
                         const TrainConfig& tb);

struct AblationReport {
  std::vector<std::size_t> k_values;
  std::vector<EvalReport> reports;

  std::string to_tsv() const;
};

// Trains one model per k (all else shared, including seeds) and evaluates
// each on the same held-out images.
AblationReport ablation_compare(const NetworkConfig& net, const TrainConfig& train, const TrainData& data,
                                const std::vector<std::size_t>& k_values,
                                const std::vector<GrayImage>& eval_clean,
                                const std::vector<std::string>& eval_names, const EvalOptions& opt,
                                std::ostream* log = nullptr);

struct ModelGradCheckOptions {
  std::size_t batch = 2;
  std::size_t height = 8;
  std::size_t width = 8;
  std::uint64_t seed = 1;
  // Build graphs once and reuse them for every perturbed evaluation.
  bool fixed_graph = true;
  GradCheckOptions check;
};

// End-to-end finite-difference check of a 64-bit model on random input with
// an MSE loss against a random target (train-mode batch norm). The head is
// re-drawn at random so that gradients reach the trunk.
GradCheckReport model_gradcheck(const NetworkConfig& net, const ModelGradCheckOptions& opt);

}  // namespace gcnn
