#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gcnn/checkpoint.hpp"
#include "gcnn/config.hpp"
#include "gcnn/image.hpp"
#include "gcnn/network.hpp"

namespace gcnn {

struct TrainConfig {
  double sigma = 25.0;
  std::size_t epochs = 30;
  std::size_t patches_per_epoch = 0;  // 0: every extracted patch
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double lr_decay = 0.5;
  std::size_t lr_decay_every = 10;  // epochs
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t checkpoint_interval = 0;  // steps; 0: only at the end
  std::size_t max_steps = 0;            // 0: epochs x steps per epoch
  std::uint64_t seed = 1;
  std::size_t patch_size = 32;
  std::size_t patch_stride = 32;
  bool fixed_graph_in_gradcheck = true;
  // Used when no manifest is given.
  std::size_t synthetic_images = 5;
  std::size_t synthetic_size = 320;
  std::size_t validation_patches = 0;
  std::string validation_manifest;
  bool log_wall_time = true;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void write_train_config(const TrainConfig& cfg, KeyValueDoc& doc);
TrainConfig read_train_config(const KeyValueDoc& doc);

// Mean squared error over all elements.
template <class T>
Var<T> loss(Var<T> noise_estimate, Var<T> true_noise);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamMoments {
  std::vector<Tensor<T>> m, v;
  std::uint64_t t = 0;
};

// One bias-corrected adaptive-moment update of every parameter in the store
// from its accumulated gradient. Non-finite gradients raise NumericError
// naming the parameter before anything is modified.
template <class T>
void adam_step(ParameterStore<T>& store, AdamMoments<T>& moments, const AdamOptions& opt, double lr);

double learning_rate_at(const TrainConfig& cfg, std::size_t epoch);

struct TrainState {
  Model<float> model;
  AdamMoments<float> adam;
  std::uint64_t step = 0;
  double best_val_psnr = -std::numeric_limits<double>::infinity();
};

Checkpoint save_train_state(const TrainState& state, const TrainConfig& cfg);
TrainState load_train_state(const Checkpoint& ck);

struct TrainData {
  std::vector<GrayImage> images;
  std::vector<GrayImage> validation;  // clean held-out patches
};

// Manifest images, or synthetic ones when `manifest` is empty.
TrainData load_train_data(const TrainConfig& cfg, const std::string& manifest);

// Held-out noisy versions of data.validation, seeded from the train seed.
std::vector<GrayImage> validation_noisy(const TrainConfig& cfg, const std::vector<GrayImage>& clean);

struct MetricRow {
  std::uint64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};
std::string format_metric(const MetricRow& row);

struct TrainRun {
  std::string out_dir;           // checkpoint.gcnn, best.gcnn, metrics.tsv; empty: no files
  std::optional<Checkpoint> resume;
  std::uint64_t stop_after = 0;  // 0: run to completion
  std::ostream* log = nullptr;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricRow> metrics;  // rows produced by this call
  std::uint64_t steps = 0;         // global step count reached
  double best_val_psnr = -std::numeric_limits<double>::infinity();
};

std::size_t steps_per_epoch(const TrainConfig& cfg, std::size_t patch_count);

TrainResult train_loop(const NetworkConfig& net, const TrainConfig& cfg, const TrainData& data,
                       const TrainRun& run);

}  // namespace gcnn
