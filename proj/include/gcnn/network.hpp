#pragma once

#include <map>
#include <string>
#include <vector>

#include "gcnn/checkpoint.hpp"
#include "gcnn/config.hpp"
#include "gcnn/gc_layer.hpp"
#include "gcnn/graph.hpp"

namespace gcnn {

enum class PreproGraph {
  kSharedInput,  // one graph on the raw input intensities for every branch
  kPerBranch,    // each branch builds its graph on its own conv features
};

struct NetworkConfig {
  std::size_t branch_channels = 22;
  std::size_t trunk_channels = 66;
  std::vector<std::size_t> branch_kernels{3, 5, 7};
  std::size_t graph_stages = 2;
  std::size_t res_blocks_per_stage = 2;
  std::size_t layers_per_res_block = 3;
  NlgConfig nlg;
  double slope = 0.2;
  std::size_t circulant_rows = 3;
  bool fnet_structured = true;
  std::size_t fnet_hidden = 0;  // 0: layer input width
  PreproGraph prepro_graph = PreproGraph::kSharedInput;
  bool batch_norm = true;
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;
  std::uint64_t seed = 1;

  void validate() const;
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

// [network] and [nlg] sections.
void write_network_config(const NetworkConfig& cfg, KeyValueDoc& doc);
NetworkConfig read_network_config(const KeyValueDoc& doc);

template <class T>
struct ForwardOutput {
  Var<T> noise_estimate;  // [N,1,H,W]
  Var<T> denoised;        // noisy - noise_estimate
};

// Graph used by each graph-convolutional layer, in execution order.
struct ForwardTrace {
  struct Layer {
    std::string name;
    GraphSetPtr graphs;
  };
  std::vector<Layer> layers;
};

// Graphs keyed by construction site ("prepro", "prepro.<b>", "stage<s>").
// A forward pass given a cache reuses any graph already present and stores
// the ones it builds, which freezes selection for gradient checks.
struct GraphCache {
  std::map<std::string, GraphSetPtr> graphs;
};

struct CensusEntry {
  std::string module;
  std::size_t count = 0;
};

template <class T>
class Model {
 public:
  explicit Model(NetworkConfig cfg);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const NetworkConfig& config() const { return cfg_; }
  ParameterStore<T>& store() { return store_; }
  const ParameterStore<T>& store() const { return store_; }

  // noisy: [N,1,H,W]. Graphs are rebuilt from the current features unless
  // `cache` already holds them.
  ForwardOutput<T> forward(Tape<T>& tape, Var<T> noisy, Mode mode, GraphCache* cache = nullptr,
                           ForwardTrace* trace = nullptr);

  // Inference-mode denoising of a [N,1,H,W] batch; returns the denoised batch.
  Tensor<T> denoise(const Tensor<T>& noisy, ForwardTrace* trace = nullptr);

  // Parameter counts per named module. FNet output layers report weights and
  // biases separately ("...fnet.out" and "...fnet.out_bias").
  std::vector<CensusEntry> census() const;
  std::size_t parameter_count() const { return store_.total_size(); }

  // Zeroes every parameter and marks batch-norm statistics as initialized
  // (mean 0, variance 1).
  void zero_parameters();

  std::size_t gc_layer_count() const { return branches_.size() + trunk_count(); }

 private:
  struct Branch {
    Parameter<T>* conv_w;
    Parameter<T>* conv_b;
    GcLayerParams<T> gc;
  };
  struct Stage {
    std::vector<std::vector<GcLayerParams<T>>> blocks;
  };

  std::size_t trunk_count() const {
    return cfg_.graph_stages * cfg_.res_blocks_per_stage * cfg_.layers_per_res_block;
  }
  GraphSetPtr graphs_for(const std::string& site, const Tensor<T>& features, GraphCache* cache) const;

  NetworkConfig cfg_;
  ParameterStore<T> store_;
  std::vector<Branch> branches_;
  std::vector<Stage> stages_;
  Parameter<T>* head_w_ = nullptr;
  Parameter<T>* head_b_ = nullptr;
};

// One graph per image of a [N,C,H,W] batch.
template <class T>
GraphSetPtr build_graph_set(const Tensor<T>& features, const NlgConfig& cfg);

// Parameters, batch-norm buffers ("<bn>.running_mean", "<bn>.running_var",
// "<bn>.initialized") and the canonical network config.
template <class T>
void store_model(const Model<T>& model, Checkpoint& ck);
template <class T>
Model<T> restore_model(const Checkpoint& ck);

}  // namespace gcnn
