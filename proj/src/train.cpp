#include "gcnn/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gcnn/eval.hpp"

namespace gcnn {
namespace {

constexpr std::string_view kTrain = "train";
constexpr std::string_view kState = "state";

}  // namespace

void TrainConfig::validate() const {
  if (!(sigma >= 0.0)) throw ConfigError("train: sigma must be >= 0");
  if (epochs == 0) throw ConfigError("train: epochs must be positive");
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (!(lr_decay > 0.0)) throw ConfigError("train: lr_decay must be positive");
  if (lr_decay_every == 0) throw ConfigError("train: lr_decay_every must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train: beta1 and beta2 must lie in [0,1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be positive");
  if (patch_size == 0 || patch_stride == 0) throw ConfigError("train: patch_size and patch_stride must be positive");
  if (synthetic_images == 0 || synthetic_size < patch_size)
    throw ConfigError("train: synthetic_images must be positive and synthetic_size >= patch_size");
}

void write_train_config(const TrainConfig& c, KeyValueDoc& doc) {
  const std::string s(kTrain);
  doc.set(s, "sigma", format_double(c.sigma));
  doc.set(s, "epochs", std::to_string(c.epochs));
  doc.set(s, "patches_per_epoch", std::to_string(c.patches_per_epoch));
  doc.set(s, "batch_size", std::to_string(c.batch_size));
  doc.set(s, "learning_rate", format_double(c.learning_rate));
  doc.set(s, "lr_decay", format_double(c.lr_decay));
  doc.set(s, "lr_decay_every", std::to_string(c.lr_decay_every));
  doc.set(s, "beta1", format_double(c.beta1));
  doc.set(s, "beta2", format_double(c.beta2));
  doc.set(s, "adam_eps", format_double(c.adam_eps));
  doc.set(s, "checkpoint_interval", std::to_string(c.checkpoint_interval));
  doc.set(s, "max_steps", std::to_string(c.max_steps));
  doc.set(s, "seed", std::to_string(c.seed));
  doc.set(s, "patch_size", std::to_string(c.patch_size));
  doc.set(s, "patch_stride", std::to_string(c.patch_stride));
  doc.set(s, "fixed_graph_in_gradcheck", c.fixed_graph_in_gradcheck ? "true" : "false");
  doc.set(s, "synthetic_images", std::to_string(c.synthetic_images));
  doc.set(s, "synthetic_size", std::to_string(c.synthetic_size));
  doc.set(s, "validation_patches", std::to_string(c.validation_patches));
  doc.set(s, "validation_manifest", c.validation_manifest);
  doc.set(s, "log_wall_time", c.log_wall_time ? "true" : "false");
}

TrainConfig read_train_config(const KeyValueDoc& doc) {
  require_known_keys(doc, kTrain,
                     {"sigma", "epochs", "patches_per_epoch", "batch_size", "learning_rate", "lr_decay",
                      "lr_decay_every", "beta1", "beta2", "adam_eps", "checkpoint_interval", "max_steps",
                      "seed", "patch_size", "patch_stride", "fixed_graph_in_gradcheck", "synthetic_images",
                      "synthetic_size", "validation_patches", "validation_manifest", "log_wall_time"});
  TrainConfig c;
  auto sz = [&](std::string_view key, std::size_t& out) {
    if (auto v = doc.get(kTrain, key)) out = parse_size(kTrain, key, *v);
  };
  auto dbl = [&](std::string_view key, double& out) {
    if (auto v = doc.get(kTrain, key)) out = parse_double(kTrain, key, *v);
  };
  auto bln = [&](std::string_view key, bool& out) {
    if (auto v = doc.get(kTrain, key)) out = parse_bool(kTrain, key, *v);
  };
  dbl("sigma", c.sigma);
  sz("epochs", c.epochs);
  sz("patches_per_epoch", c.patches_per_epoch);
  sz("batch_size", c.batch_size);
  dbl("learning_rate", c.learning_rate);
  dbl("lr_decay", c.lr_decay);
  sz("lr_decay_every", c.lr_decay_every);
  dbl("beta1", c.beta1);
  dbl("beta2", c.beta2);
  dbl("adam_eps", c.adam_eps);
  sz("checkpoint_interval", c.checkpoint_interval);
  sz("max_steps", c.max_steps);
  if (auto v = doc.get(kTrain, "seed")) c.seed = parse_u64(kTrain, "seed", *v);
  sz("patch_size", c.patch_size);
  sz("patch_stride", c.patch_stride);
  bln("fixed_graph_in_gradcheck", c.fixed_graph_in_gradcheck);
  sz("synthetic_images", c.synthetic_images);
  sz("synthetic_size", c.synthetic_size);
  sz("validation_patches", c.validation_patches);
  if (auto v = doc.get(kTrain, "validation_manifest")) c.validation_manifest = *v;
  bln("log_wall_time", c.log_wall_time);
  c.validate();
  return c;
}

template <class T>
Var<T> loss(Var<T> noise_estimate, Var<T> true_noise) {
  if (noise_estimate.shape() != true_noise.shape())
    throw ShapeError("loss: estimate " + shape_str(noise_estimate.shape()) + " vs truth " +
                     shape_str(true_noise.shape()));
  return ops::mse(noise_estimate, true_noise);
}

template <class T>
void adam_step(ParameterStore<T>& store, AdamMoments<T>& mo, const AdamOptions& opt, double lr) {
  auto& params = store.parameters();
  for (const auto& p : params)
    if (!p.grad.all_finite()) throw NumericError("non-finite gradient in parameter block '" + p.name + "'");
  if (mo.m.size() != params.size()) {
    mo.m.clear();
    mo.v.clear();
    for (const auto& p : params) {
      mo.m.push_back(Tensor<T>::zeros_like(p.value));
      mo.v.push_back(Tensor<T>::zeros_like(p.value));
    }
  }
  ++mo.t;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(mo.t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(mo.t));
  std::size_t idx = 0;
  for (auto& p : params) {
    T* w = p.value.ptr();
    const T* g = p.grad.ptr();
    T* m = mo.m[idx].ptr();
    T* v = mo.v[idx].ptr();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = opt.beta1 * static_cast<double>(m[i]) + (1.0 - opt.beta1) * gi;
      const double vi = opt.beta2 * static_cast<double>(v[i]) + (1.0 - opt.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1, vhat = vi / c2;
      w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * mhat / (std::sqrt(vhat) + opt.eps));
    }
    ++idx;
  }
}

double learning_rate_at(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.lr_decay_every));
}

Checkpoint save_train_state(const TrainState& st, const TrainConfig& cfg) {
  Checkpoint ck;
  store_model(st.model, ck);
  const auto& params = st.model.store().parameters();
  for (std::size_t i = 0; i < st.adam.m.size(); ++i) {
    ck.put<float>("adam.m." + params[i].name, st.adam.m[i]);
    ck.put<float>("adam.v." + params[i].name, st.adam.v[i]);
  }
  KeyValueDoc doc = KeyValueDoc::parse(ck.config_text);
  write_train_config(cfg, doc);
  const std::string s(kState);
  doc.set(s, "step", std::to_string(st.step));
  doc.set(s, "adam_t", std::to_string(st.adam.t));
  doc.set(s, "best_val_psnr", format_double(st.best_val_psnr));
  ck.config_text = doc.to_text();
  return ck;
}

TrainState load_train_state(const Checkpoint& ck) {
  const KeyValueDoc doc = KeyValueDoc::parse(ck.config_text);
  TrainState st{restore_model<float>(ck), {}, 0, -std::numeric_limits<double>::infinity()};
  require_known_keys(doc, kState, {"step", "adam_t", "best_val_psnr"});
  if (auto v = doc.get(kState, "step")) st.step = parse_u64(kState, "step", *v);
  if (auto v = doc.get(kState, "adam_t")) st.adam.t = parse_u64(kState, "adam_t", *v);
  if (auto v = doc.get(kState, "best_val_psnr")) st.best_val_psnr = parse_double(kState, "best_val_psnr", *v);
  if (st.adam.t > 0) {
    for (const auto& p : st.model.store().parameters()) {
      st.adam.m.push_back(ck.get<float>("adam.m." + p.name));
      st.adam.v.push_back(ck.get<float>("adam.v." + p.name));
      if (st.adam.m.back().shape() != p.value.shape() || st.adam.v.back().shape() != p.value.shape())
        throw FormatError("checkpoint: optimizer moments of '" + p.name + "' have the wrong shape");
    }
  }
  return st;
}

TrainData load_train_data(const TrainConfig& cfg, const std::string& manifest) {
  TrainData data;
  if (!manifest.empty()) {
    for (const auto& path : read_manifest(manifest)) data.images.push_back(load_image(path));
  } else {
    for (std::size_t i = 0; i < cfg.synthetic_images; ++i)
      data.images.push_back(make_synthetic_image(substream_seed(cfg.seed, "synthetic", {i}),
                                                 cfg.synthetic_size, cfg.synthetic_size));
  }
  if (cfg.validation_patches > 0) {
    std::vector<GrayImage> sources;
    if (!cfg.validation_manifest.empty()) {
      for (const auto& path : read_manifest(cfg.validation_manifest)) sources.push_back(load_image(path));
    } else {
      const std::size_t per_image = (cfg.synthetic_size / cfg.patch_size) * (cfg.synthetic_size / cfg.patch_size);
      const std::size_t needed = (cfg.validation_patches + per_image - 1) / per_image;
      for (std::size_t i = 0; i < needed; ++i)
        sources.push_back(make_synthetic_image(substream_seed(cfg.seed, "validation", {i}),
                                               cfg.synthetic_size, cfg.synthetic_size));
    }
    const PatchSet set = extract_patches(sources, cfg.patch_size, cfg.patch_size);
    const auto order = iterate(set, substream_seed(cfg.seed, "validation_order"));
    for (std::size_t i = 0; i < order.size() && i < cfg.validation_patches; ++i)
      data.validation.push_back(crop(sources[order[i].image], order[i].row, order[i].col, cfg.patch_size,
                                     cfg.patch_size));
  }
  return data;
}

std::vector<GrayImage> validation_noisy(const TrainConfig& cfg, const std::vector<GrayImage>& clean) {
  std::vector<GrayImage> out;
  for (std::size_t i = 0; i < clean.size(); ++i)
    out.push_back(add_awgn(clean[i], NoiseConfig{cfg.sigma, substream_seed(cfg.seed, "validation_noise", {i})}));
  return out;
}

std::string format_metric(const MetricRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%llu\t%.9g\t%.9g\t%.6f", static_cast<unsigned long long>(r.step), r.loss, r.lr,
                r.seconds);
  return buf;
}

std::size_t steps_per_epoch(const TrainConfig& cfg, std::size_t patch_count) {
  const std::size_t per_epoch = cfg.patches_per_epoch == 0 ? patch_count : cfg.patches_per_epoch;
  if (per_epoch > patch_count)
    throw SizingError("train: patches_per_epoch = " + std::to_string(per_epoch) + " but only " +
                      std::to_string(patch_count) + " patches are available");
  const std::size_t spe = per_epoch / cfg.batch_size;
  if (spe == 0)
    throw SizingError("train: " + std::to_string(per_epoch) + " patches per epoch cannot fill one batch of " +
                      std::to_string(cfg.batch_size));
  return spe;
}

TrainResult train_loop(const NetworkConfig& net, const TrainConfig& cfg, const TrainData& data,
                       const TrainRun& run) {
  net.validate();
  cfg.validate();
  if (data.images.empty()) throw UsageError("train: no training images");
  net.nlg.check_viable(cfg.patch_size, cfg.patch_size);
  const PatchSet set = extract_patches(data.images, cfg.patch_size, cfg.patch_stride);
  const std::size_t spe = steps_per_epoch(cfg, set.patches.size());
  const std::uint64_t total = cfg.max_steps ? cfg.max_steps : static_cast<std::uint64_t>(cfg.epochs) * spe;

  TrainState st{Model<float>(net), {}, 0, -std::numeric_limits<double>::infinity()};
  if (run.resume) {
    const KeyValueDoc doc = KeyValueDoc::parse(run.resume->config_text);
    if (!(read_network_config(doc) == net) || !(read_train_config(doc) == cfg))
      throw ConfigError("train: resume checkpoint was written with a different configuration");
    st = load_train_state(*run.resume);
  }

  namespace fs = std::filesystem;
  std::ofstream metrics_file;
  if (!run.out_dir.empty()) {
    fs::create_directories(run.out_dir);
    metrics_file.open(fs::path(run.out_dir) / "metrics.tsv", std::ios::app);
    if (!metrics_file) throw IoError("cannot open metrics log in '" + run.out_dir + "'");
  }
  auto save_to = [&](const std::string& file, const Checkpoint& ck) {
    if (!run.out_dir.empty()) ck.save((fs::path(run.out_dir) / file).string());
  };

  const std::vector<GrayImage> val_noisy = validation_noisy(cfg, data.validation);
  TrainResult result;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<PatchRef> order;
  const AdamOptions adam{cfg.beta1, cfg.beta2, cfg.adam_eps};

  while (st.step < total && (run.stop_after == 0 || st.step < run.stop_after)) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t epoch = st.step / spe, pos = st.step % spe;
    if (epoch != cached_epoch) {
      order = iterate(set, substream_seed(cfg.seed, "shuffle", {epoch}));
      cached_epoch = epoch;
    }
    std::vector<GrayImage> clean, noisy;
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      const std::size_t slot = pos * cfg.batch_size + i;
      const PatchRef& p = order[slot];
      clean.push_back(crop(data.images[p.image], p.row, p.col, cfg.patch_size, cfg.patch_size));
      noisy.push_back(add_awgn(clean.back(), NoiseConfig{cfg.sigma, substream_seed(cfg.seed, "noise", {epoch, slot})}));
    }
    const Tensor<float> x = to_tensor<float>(noisy);
    Tensor<float> target = to_tensor<float>(clean);
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = x[i] - target[i];

    const double lr = learning_rate_at(cfg, epoch);
    Tape<float> tape;
    st.model.store().zero_grad();
    auto out = st.model.forward(tape, tape.constant(x), Mode::kTrain);
    Var<float> l = loss(out.noise_estimate, tape.constant(std::move(target)));
    tape.backward(l);
    adam_step(st.model.store(), st.adam, adam, lr);
    ++st.step;

    MetricRow row{st.step, static_cast<double>(l.value()[0]), lr, 0.0};
    if (cfg.log_wall_time)
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.push_back(row);
    if (metrics_file) {
      metrics_file << format_metric(row) << '\n';
      metrics_file.flush();
    }
    if (run.log) *run.log << "step " << row.step << "/" << total << " loss " << row.loss << " lr " << lr << '\n';

    if (!val_noisy.empty() && pos + 1 == spe) {
      double sum = 0.0;
      for (std::size_t i = 0; i < val_noisy.size(); ++i)
        sum += psnr(data.validation[i], denoise_image(st.model, val_noisy[i]));
      const double avg = sum / static_cast<double>(val_noisy.size());
      if (run.log) *run.log << "epoch " << epoch + 1 << " validation PSNR " << format_psnr(avg) << " dB\n";
      if (avg > st.best_val_psnr) {
        st.best_val_psnr = avg;
        save_to("best.gcnn", save_train_state(st, cfg));
      }
    }
    if (cfg.checkpoint_interval && st.step % cfg.checkpoint_interval == 0 && st.step < total)
      save_to("checkpoint.gcnn", save_train_state(st, cfg));
  }

  result.checkpoint = save_train_state(st, cfg);
  save_to("checkpoint.gcnn", result.checkpoint);
  result.steps = st.step;
  result.best_val_psnr = st.best_val_psnr;
  return result;
}

template Var<float> loss<float>(Var<float>, Var<float>);
template Var<double> loss<double>(Var<double>, Var<double>);
template void adam_step<float>(ParameterStore<float>&, AdamMoments<float>&, const AdamOptions&, double);
template void adam_step<double>(ParameterStore<double>&, AdamMoments<double>&, const AdamOptions&, double);

}  // namespace gcnn
