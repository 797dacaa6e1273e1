#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcnn/ecc.hpp"
#include "gcnn/ops.hpp"
#include "gcnn/params.hpp"

namespace gcnn {

struct GcLayerSpec {
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  std::size_t fnet_hidden = 0;     // 0: same as d_in
  std::size_t circulant_rows = 3;  // reduced to a divisor of d_out*d_in if needed
  bool structured = true;
  bool batch_norm = true;
  double slope = 0.2;
  BatchNormOptions bn;
};

// Handles into a ParameterStore for one graph-convolutional layer: local
// 3x3 branch, edge-conditioned branch, batch norm.
template <class T>
struct GcLayerParams {
  GcLayerSpec spec;
  FNetShape fnet;
  Parameter<T>* local_w = nullptr;  // [d_out, d_in, 3, 3]
  Parameter<T>* local_b = nullptr;
  Parameter<T>* hidden_w = nullptr;
  Parameter<T>* hidden_b = nullptr;
  Parameter<T>* out_w = nullptr;
  Parameter<T>* out_b = nullptr;
  Parameter<T>* node_w = nullptr;
  Parameter<T>* node_b = nullptr;
  Parameter<T>* bn_gamma = nullptr;
  Parameter<T>* bn_beta = nullptr;
  BatchNormState<T>* bn_state = nullptr;
};

// Registers the layer's parameters under `prefix` and initializes them:
// fan-in scaled uniform weights, circulant generators with variance
// 1/(hidden*rows), zero biases, unit BN scale.
template <class T>
GcLayerParams<T> create_gc_layer(ParameterStore<T>& store, const std::string& prefix,
                                 const GcLayerSpec& spec, CounterRng& rng);

// Binds the ECC parameters of a layer on a tape.
template <class T>
EccVars<T> bind_ecc(Tape<T>& tape, const GcLayerParams<T>& layer);

// y = LReLU(BN((conv3x3(x) + ecc_aggregate(x, graph)) / 2)).
template <class T>
Var<T> gc_layer_forward(Tape<T>& tape, Var<T> x, GraphSetPtr graphs,
                        const GcLayerParams<T>& layer, Mode mode);

// Boolean pixel grid.
struct Mask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> cells;

  Mask() = default;
  Mask(std::size_t h, std::size_t w) : height(h), width(w), cells(h * w, 0) {}
  bool at(std::size_t r, std::size_t c) const { return cells[r * width + c] != 0; }
  void set(std::size_t r, std::size_t c) { cells[r * width + c] = 1; }
  std::size_t count() const;
  bool subset_of(const Mask& other) const;
  friend bool operator==(const Mask&, const Mask&) = default;
};

// One step of dependency tracing through a graph-convolutional layer:
// dilation by the kernel footprint plus the graph neighbors of every active
// pixel. `graph` may be null (purely local layer).
Mask receptive_mask_step(const Mask& in, const NonLocalGraph* graph, std::size_t kernel_extent = 3);

}  // namespace gcnn
