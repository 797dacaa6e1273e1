#include "gcnn/network.hpp"

#include <algorithm>

namespace gcnn {
namespace {

constexpr std::string_view kNet = "network";
constexpr std::string_view kNlg = "nlg";

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

GcLayerSpec layer_spec(const NetworkConfig& cfg, std::size_t channels) {
  GcLayerSpec spec;
  spec.d_in = spec.d_out = channels;
  spec.fnet_hidden = cfg.fnet_hidden;
  spec.circulant_rows = cfg.circulant_rows;
  spec.structured = cfg.fnet_structured;
  spec.batch_norm = cfg.batch_norm;
  spec.slope = cfg.slope;
  spec.bn.eps = cfg.bn_eps;
  spec.bn.momentum = cfg.bn_momentum;
  return spec;
}

}  // namespace

void NetworkConfig::validate() const {
  if (branch_kernels.empty()) throw ConfigError("network: branch_kernels must not be empty");
  for (auto k : branch_kernels)
    if (k % 2 == 0) throw ConfigError("network: branch kernel sizes must be odd");
  if (branch_channels == 0 || branch_channels * branch_kernels.size() != trunk_channels)
    throw ConfigError("network: branch_channels (" + std::to_string(branch_channels) + ") x " +
                      std::to_string(branch_kernels.size()) + " branches must equal trunk_channels (" +
                      std::to_string(trunk_channels) + ")");
  if (layers_per_res_block < 1) throw ConfigError("network: layers_per_res_block must be >= 1");
  if (!(slope > 0.0 && slope < 1.0)) throw ConfigError("network: slope must lie in (0,1)");
  if (circulant_rows < 1) throw ConfigError("network: circulant_rows must be >= 1");
  if (!(bn_eps > 0.0)) throw ConfigError("network: bn_eps must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0))
    throw ConfigError("network: bn_momentum must lie in [0,1)");
  nlg.validate();
}

void write_network_config(const NetworkConfig& c, KeyValueDoc& doc) {
  const std::string net(kNet), nlg(kNlg);
  doc.set(net, "branch_channels", std::to_string(c.branch_channels));
  doc.set(net, "trunk_channels", std::to_string(c.trunk_channels));
  doc.set(net, "branch_kernels", join_sizes(c.branch_kernels));
  doc.set(net, "graph_stages", std::to_string(c.graph_stages));
  doc.set(net, "res_blocks_per_stage", std::to_string(c.res_blocks_per_stage));
  doc.set(net, "layers_per_res_block", std::to_string(c.layers_per_res_block));
  doc.set(net, "slope", format_double(c.slope));
  doc.set(net, "circulant_rows", std::to_string(c.circulant_rows));
  doc.set(net, "fnet_structured", c.fnet_structured ? "true" : "false");
  doc.set(net, "fnet_hidden", std::to_string(c.fnet_hidden));
  doc.set(net, "prepro_graph", c.prepro_graph == PreproGraph::kSharedInput ? "shared_input" : "per_branch");
  doc.set(net, "batch_norm", c.batch_norm ? "true" : "false");
  doc.set(net, "bn_eps", format_double(c.bn_eps));
  doc.set(net, "bn_momentum", format_double(c.bn_momentum));
  doc.set(net, "seed", std::to_string(c.seed));
  doc.set(nlg, "k", std::to_string(c.nlg.k));
  doc.set(nlg, "window_radius", std::to_string(c.nlg.window_radius));
  doc.set(nlg, "exclusion_radius", std::to_string(c.nlg.exclusion_radius));
}

NetworkConfig read_network_config(const KeyValueDoc& doc) {
  require_known_keys(doc, kNet,
                     {"branch_channels", "trunk_channels", "branch_kernels", "graph_stages",
                      "res_blocks_per_stage", "layers_per_res_block", "slope", "circulant_rows",
                      "fnet_structured", "fnet_hidden", "prepro_graph", "batch_norm", "bn_eps",
                      "bn_momentum", "seed"});
  require_known_keys(doc, kNlg, {"k", "window_radius", "exclusion_radius"});
  NetworkConfig c;
  auto size = [&](std::string_view sec, std::string_view key, std::size_t& out) {
    if (auto v = doc.get(sec, key)) out = parse_size(sec, key, *v);
  };
  size(kNet, "branch_channels", c.branch_channels);
  size(kNet, "trunk_channels", c.trunk_channels);
  if (auto v = doc.get(kNet, "branch_kernels")) c.branch_kernels = parse_size_list(kNet, "branch_kernels", *v);
  size(kNet, "graph_stages", c.graph_stages);
  size(kNet, "res_blocks_per_stage", c.res_blocks_per_stage);
  size(kNet, "layers_per_res_block", c.layers_per_res_block);
  if (auto v = doc.get(kNet, "slope")) c.slope = parse_double(kNet, "slope", *v);
  size(kNet, "circulant_rows", c.circulant_rows);
  if (auto v = doc.get(kNet, "fnet_structured")) c.fnet_structured = parse_bool(kNet, "fnet_structured", *v);
  size(kNet, "fnet_hidden", c.fnet_hidden);
  if (auto v = doc.get(kNet, "prepro_graph")) {
    if (*v == "shared_input")
      c.prepro_graph = PreproGraph::kSharedInput;
    else if (*v == "per_branch")
      c.prepro_graph = PreproGraph::kPerBranch;
    else
      throw ConfigError("config network.prepro_graph: expected shared_input or per_branch, got '" + *v + "'");
  }
  if (auto v = doc.get(kNet, "batch_norm")) c.batch_norm = parse_bool(kNet, "batch_norm", *v);
  if (auto v = doc.get(kNet, "bn_eps")) c.bn_eps = parse_double(kNet, "bn_eps", *v);
  if (auto v = doc.get(kNet, "bn_momentum")) c.bn_momentum = parse_double(kNet, "bn_momentum", *v);
  if (auto v = doc.get(kNet, "seed")) c.seed = parse_u64(kNet, "seed", *v);
  size(kNlg, "k", c.nlg.k);
  size(kNlg, "window_radius", c.nlg.window_radius);
  size(kNlg, "exclusion_radius", c.nlg.exclusion_radius);
  c.validate();
  return c;
}

template <class T>
GraphSetPtr build_graph_set(const Tensor<T>& f, const NlgConfig& cfg) {
  if (f.rank() != 4) throw ShapeError("build_graph_set: features must be [N,C,H,W]");
  auto set = std::make_shared<GraphSet>();
  const std::size_t n = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
  set->reserve(n);
  for (std::size_t b = 0; b < n; ++b)
    set->push_back(build_knn_graph<T>(FeatureView<T>{f.ptr() + b * c * h * w, c, h, w}, cfg));
  return set;
}

template <class T>
Model<T>::Model(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  CounterRng rng(substream_seed(cfg_.seed, "init"));
  const std::size_t bc = cfg_.branch_channels, tc = cfg_.trunk_channels;
  for (std::size_t b = 0; b < cfg_.branch_kernels.size(); ++b) {
    const std::size_t k = cfg_.branch_kernels[b];
    const std::string pre = "prepro." + std::to_string(b);
    Branch br;
    br.conv_w = &store_.add(pre + ".conv.w", uniform_tensor<T>(Shape{bc, 1, k, k},
                                                               1.0 / static_cast<double>(k * k), rng));
    br.conv_b = &store_.add(pre + ".conv.b", Tensor<T>(Shape{bc}));
    br.gc = create_gc_layer<T>(store_, pre + ".gc", layer_spec(cfg_, bc), rng);
    branches_.push_back(br);
  }
  for (std::size_t s = 0; s < cfg_.graph_stages; ++s) {
    Stage stage;
    for (std::size_t r = 0; r < cfg_.res_blocks_per_stage; ++r) {
      std::vector<GcLayerParams<T>> block;
      for (std::size_t l = 0; l < cfg_.layers_per_res_block; ++l)
        block.push_back(create_gc_layer<T>(store_,
                                           "stage" + std::to_string(s) + ".block" + std::to_string(r) +
                                               ".layer" + std::to_string(l),
                                           layer_spec(cfg_, tc), rng));
      stage.blocks.push_back(std::move(block));
    }
    stages_.push_back(std::move(stage));
  }
  // Zero head: the untrained network predicts no noise.
  head_w_ = &store_.add("head.w", Tensor<T>(Shape{1, tc, 3, 3}));
  head_b_ = &store_.add("head.b", Tensor<T>(Shape{1}));
}

template <class T>
GraphSetPtr Model<T>::graphs_for(const std::string& site, const Tensor<T>& features,
                                 GraphCache* cache) const {
  if (cache) {
    auto it = cache->graphs.find(site);
    if (it != cache->graphs.end()) return it->second;
  }
  GraphSetPtr g = build_graph_set<T>(features, cfg_.nlg);
  if (cache) cache->graphs[site] = g;
  return g;
}

template <class T>
ForwardOutput<T> Model<T>::forward(Tape<T>& tape, Var<T> noisy, Mode mode, GraphCache* cache,
                                   ForwardTrace* trace) {
  const Shape& s = noisy.shape();
  if (s.size() != 4 || s[1] != 1) throw ShapeError("forward: input must be [N,1,H,W], got " + shape_str(s));
  try {
    cfg_.nlg.check_viable(s[2], s[3]);
  } catch (const SizingError& e) {
    throw SizingError(std::string(e.what()) + " (for large images enable tiled inference)");
  }
  auto note = [trace](std::string name, const GraphSetPtr& g) {
    if (trace) trace->layers.push_back({std::move(name), g});
  };

  GraphSetPtr input_graphs;
  if (cfg_.prepro_graph == PreproGraph::kSharedInput)
    input_graphs = graphs_for("prepro", noisy.value(), cache);

  std::vector<Var<T>> feats;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const Branch& br = branches_[b];
    Var<T> f = ops::leaky_relu(
        ops::conv2d(noisy, tape.parameter(*br.conv_w), tape.parameter(*br.conv_b)),
        static_cast<T>(cfg_.slope));
    GraphSetPtr g = input_graphs ? input_graphs
                                 : graphs_for("prepro." + std::to_string(b), f.value(), cache);
    note("prepro." + std::to_string(b) + ".gc", g);
    feats.push_back(gc_layer_forward(tape, f, g, br.gc, mode));
  }
  Var<T> trunk = ops::concat_channels<T>(feats);

  for (std::size_t si = 0; si < stages_.size(); ++si) {
    GraphSetPtr g = graphs_for("stage" + std::to_string(si), trunk.value(), cache);
    const Stage& stage = stages_[si];
    for (std::size_t r = 0; r < stage.blocks.size(); ++r) {
      Var<T> y = trunk;
      for (std::size_t l = 0; l < stage.blocks[r].size(); ++l) {
        note("stage" + std::to_string(si) + ".block" + std::to_string(r) + ".layer" + std::to_string(l), g);
        y = gc_layer_forward(tape, y, g, stage.blocks[r][l], mode);
      }
      trunk = ops::add(trunk, y);
    }
  }
  Var<T> noise = ops::conv2d(trunk, tape.parameter(*head_w_), tape.parameter(*head_b_));
  return {noise, ops::sub(noisy, noise)};
}

template <class T>
Tensor<T> Model<T>::denoise(const Tensor<T>& noisy, ForwardTrace* trace) {
  Tape<T> tape;
  tape.set_grad_enabled(false);
  auto out = forward(tape, tape.constant(noisy), Mode::kInference, nullptr, trace);
  return out.denoised.value();
}

template <class T>
std::vector<CensusEntry> Model<T>::census() const {
  std::vector<CensusEntry> out;
  auto add = [&out](std::string name, std::size_t n) { out.push_back({std::move(name), n}); };
  auto layer = [&add](const std::string& pre, const GcLayerParams<T>& l) {
    add(pre + ".local", l.local_w->value.size() + l.local_b->value.size());
    add(pre + ".fnet.hidden", l.hidden_w->value.size() + l.hidden_b->value.size());
    add(pre + ".fnet.out", l.out_w->value.size());
    add(pre + ".fnet.out_bias", l.out_b->value.size());
    add(pre + ".node", l.node_w->value.size() + l.node_b->value.size());
    if (l.bn_gamma) add(pre + ".bn", l.bn_gamma->value.size() + l.bn_beta->value.size());
  };
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const std::string pre = "prepro." + std::to_string(b);
    add(pre + ".conv", branches_[b].conv_w->value.size() + branches_[b].conv_b->value.size());
    layer(pre + ".gc", branches_[b].gc);
  }
  for (std::size_t s = 0; s < stages_.size(); ++s)
    for (std::size_t r = 0; r < stages_[s].blocks.size(); ++r)
      for (std::size_t l = 0; l < stages_[s].blocks[r].size(); ++l)
        layer("stage" + std::to_string(s) + ".block" + std::to_string(r) + ".layer" + std::to_string(l),
              stages_[s].blocks[r][l]);
  add("head", head_w_->value.size() + head_b_->value.size());
  return out;
}

template <class T>
void Model<T>::zero_parameters() {
  for (auto& p : store_.parameters()) p.value.fill(T{0});
  for (auto& bn : store_.batch_norms()) {
    bn.state.running_mean.fill(T{0});
    bn.state.running_var.fill(T{1});
    bn.state.initialized = true;
  }
}

template <class T>
void store_model(const Model<T>& model, Checkpoint& ck) {
  for (const auto& p : model.store().parameters()) ck.put<T>(p.name, p.value);
  for (const auto& bn : model.store().batch_norms()) {
    ck.put<T>(bn.name + ".running_mean", bn.state.running_mean);
    ck.put<T>(bn.name + ".running_var", bn.state.running_var);
    ck.put<T>(bn.name + ".initialized", Tensor<T>(Shape{1}, bn.state.initialized ? T{1} : T{0}));
  }
  KeyValueDoc doc = KeyValueDoc::parse(ck.config_text);
  write_network_config(model.config(), doc);
  ck.config_text = doc.to_text();
}

template <class T>
Model<T> restore_model(const Checkpoint& ck) {
  const KeyValueDoc doc = KeyValueDoc::parse(ck.config_text);
  if (!doc.has_section(kNet)) throw FormatError("checkpoint: config block has no [network] section");
  Model<T> model(read_network_config(doc));
  for (auto& p : model.store().parameters()) {
    Tensor<T> t = ck.get<T>(p.name);
    if (t.shape() != p.value.shape())
      throw FormatError("checkpoint: tensor '" + p.name + "' has shape " + shape_str(t.shape()) +
                        ", model expects " + shape_str(p.value.shape()));
    p.value = std::move(t);
  }
  for (auto& bn : model.store().batch_norms()) {
    const Shape expected = bn.state.running_mean.shape();
    bn.state.running_mean = ck.get<T>(bn.name + ".running_mean");
    bn.state.running_var = ck.get<T>(bn.name + ".running_var");
    if (bn.state.running_mean.shape() != expected || bn.state.running_var.shape() != expected)
      throw FormatError("checkpoint: batch-norm buffers of '" + bn.name + "' have the wrong size");
    bn.state.initialized = ck.get<T>(bn.name + ".initialized")[0] != T{0};
  }
  return model;
}

template GraphSetPtr build_graph_set<float>(const Tensor<float>&, const NlgConfig&);
template GraphSetPtr build_graph_set<double>(const Tensor<double>&, const NlgConfig&);
template class Model<float>;
template class Model<double>;
template void store_model<float>(const Model<float>&, Checkpoint&);
template void store_model<double>(const Model<double>&, Checkpoint&);
template Model<float> restore_model<float>(const Checkpoint&);
template Model<double> restore_model<double>(const Checkpoint&);

}  // namespace gcnn
