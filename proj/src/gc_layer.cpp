#include "gcnn/gc_layer.hpp"

#include <algorithm>

namespace gcnn {

template <class T>
GcLayerParams<T> create_gc_layer(ParameterStore<T>& store, const std::string& prefix,
                                 const GcLayerSpec& spec, CounterRng& rng) {
  if (spec.d_in == 0 || spec.d_out == 0) throw ConfigError(prefix + ": channel counts must be positive");
  GcLayerParams<T> layer;
  layer.spec = spec;
  const std::size_t hid = spec.fnet_hidden == 0 ? spec.d_in : spec.fnet_hidden;
  const std::size_t n_out = spec.d_in * spec.d_out;
  layer.fnet = FNetShape{spec.d_in, spec.d_out, hid,
                         spec.structured ? circulant_rows_for(n_out, std::min(spec.circulant_rows, hid)) : 1,
                         spec.structured};
  const FNetShape& fs = layer.fnet;

  layer.local_w = &store.add(prefix + ".local.w",
                             uniform_tensor<T>(Shape{spec.d_out, spec.d_in, 3, 3},
                                               1.0 / static_cast<double>(9 * spec.d_in), rng));
  layer.local_b = &store.add(prefix + ".local.b", Tensor<T>(Shape{spec.d_out}));
  layer.hidden_w = &store.add(prefix + ".fnet.hidden.w",
                              uniform_tensor<T>(Shape{hid, spec.d_in},
                                                1.0 / static_cast<double>(spec.d_in), rng));
  layer.hidden_b = &store.add(prefix + ".fnet.hidden.b", Tensor<T>(Shape{hid}));
  const double out_var = fs.structured ? 1.0 / static_cast<double>(hid * fs.rows)
                                       : 1.0 / static_cast<double>(hid);
  layer.out_w = &store.add(prefix + (fs.structured ? ".fnet.out.generators" : ".fnet.out.w"),
                           uniform_tensor<T>(fs.output_weight_shape(), out_var, rng));
  layer.out_b = &store.add(prefix + ".fnet.out.b", Tensor<T>(Shape{n_out}));
  layer.node_w = &store.add(prefix + ".node.w",
                            uniform_tensor<T>(Shape{spec.d_out, spec.d_in},
                                              1.0 / static_cast<double>(spec.d_in), rng));
  layer.node_b = &store.add(prefix + ".node.b", Tensor<T>(Shape{spec.d_out}));
  if (spec.batch_norm) {
    layer.bn_gamma = &store.add(prefix + ".bn.gamma", Tensor<T>(Shape{spec.d_out}, T{1}));
    layer.bn_beta = &store.add(prefix + ".bn.beta", Tensor<T>(Shape{spec.d_out}));
    layer.bn_state = &store.add_batch_norm(prefix + ".bn", spec.d_out);
  }
  return layer;
}

template <class T>
EccVars<T> bind_ecc(Tape<T>& tape, const GcLayerParams<T>& layer) {
  EccVars<T> v;
  v.fnet.shape = layer.fnet;
  v.fnet.hidden_w = tape.parameter(*layer.hidden_w);
  v.fnet.hidden_b = tape.parameter(*layer.hidden_b);
  v.fnet.out_w = tape.parameter(*layer.out_w);
  v.fnet.out_b = tape.parameter(*layer.out_b);
  v.fnet.slope = static_cast<T>(layer.spec.slope);
  v.node_w = tape.parameter(*layer.node_w);
  v.node_b = tape.parameter(*layer.node_b);
  return v;
}

template <class T>
Var<T> gc_layer_forward(Tape<T>& tape, Var<T> x, GraphSetPtr graphs,
                        const GcLayerParams<T>& layer, Mode mode) {
  Var<T> local = ops::conv2d(x, tape.parameter(*layer.local_w), tape.parameter(*layer.local_b));
  Var<T> nonlocal = ops::ecc_aggregate(x, std::move(graphs), bind_ecc(tape, layer));
  Var<T> y = ops::scale(ops::add(local, nonlocal), T(0.5));
  if (layer.spec.batch_norm)
    y = ops::batch_norm(y, tape.parameter(*layer.bn_gamma), tape.parameter(*layer.bn_beta),
                        *layer.bn_state, mode, layer.spec.bn);
  return ops::leaky_relu(y, static_cast<T>(layer.spec.slope));
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

bool Mask::subset_of(const Mask& other) const {
  if (height != other.height || width != other.width) return false;
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (cells[i] && !other.cells[i]) return false;
  return true;
}

Mask receptive_mask_step(const Mask& in, const NonLocalGraph* graph, std::size_t kernel_extent) {
  if (kernel_extent % 2 == 0) throw ConfigError("receptive_mask_step: kernel extent must be odd");
  if (graph && (graph->height() != in.height || graph->width() != in.width))
    throw ShapeError("receptive_mask_step: graph grid does not match mask");
  const long rad = static_cast<long>(kernel_extent / 2);
  const long h = static_cast<long>(in.height), w = static_cast<long>(in.width);
  Mask out(in.height, in.width);
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) {
      if (!in.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c))) continue;
      for (long rr = std::max(0L, r - rad); rr <= std::min(h - 1, r + rad); ++rr)
        for (long cc = std::max(0L, c - rad); cc <= std::min(w - 1, c + rad); ++cc)
          out.set(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
      if (graph)
        for (auto j : graph->neighbors(static_cast<std::size_t>(r * w + c))) out.cells[j] = 1;
    }
  return out;
}

template GcLayerParams<float> create_gc_layer<float>(ParameterStore<float>&, const std::string&,
                                                     const GcLayerSpec&, CounterRng&);
template GcLayerParams<double> create_gc_layer<double>(ParameterStore<double>&,
                                                       const std::string&, const GcLayerSpec&,
                                                       CounterRng&);
template EccVars<float> bind_ecc<float>(Tape<float>&, const GcLayerParams<float>&);
template EccVars<double> bind_ecc<double>(Tape<double>&, const GcLayerParams<double>&);
template Var<float> gc_layer_forward<float>(Tape<float>&, Var<float>, GraphSetPtr,
                                            const GcLayerParams<float>&, Mode);
template Var<double> gc_layer_forward<double>(Tape<double>&, Var<double>, GraphSetPtr,
                                              const GcLayerParams<double>&, Mode);

}  // namespace gcnn
