#include "gcnn/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace gcnn {

double psnr(const GrayImage& clean, const GrayImage& test) {
  if (clean.height != test.height || clean.width != test.width)
    throw ShapeError("psnr: image sizes differ (" + std::to_string(clean.height) + "x" +
                     std::to_string(clean.width) + " vs " + std::to_string(test.height) + "x" +
                     std::to_string(test.width) + ")");
  if (clean.pixels.empty()) throw ShapeError("psnr: empty images");
  double se = 0.0;
  for (std::size_t i = 0; i < clean.pixels.size(); ++i) {
    const double t = std::clamp(static_cast<double>(test.pixels[i]), 0.0, 1.0);
    const double d = static_cast<double>(clean.pixels[i]) - t;
    se += d * d;
  }
  const double mse = se / static_cast<double>(clean.pixels.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

std::string format_psnr(double db) {
  if (std::isinf(db) && db > 0) return "inf";
  return format_double(db);
}

GrayImage denoise_image(Model<float>& model, const GrayImage& noisy, const TileOptions& tiling) {
  const std::size_t h = noisy.height, w = noisy.width;
  if (!tiling.enabled || (h <= tiling.tile && w <= tiling.tile)) {
    const GrayImage one[] = {noisy};
    return clamped(from_tensor(model.denoise(to_tensor<float>(one))));
  }
  if (tiling.tile == 0 || tiling.overlap >= tiling.tile)
    throw ConfigError("tiling: overlap must be smaller than the tile size");
  auto starts = [&](std::size_t extent) {
    const std::size_t t = std::min(tiling.tile, extent);
    std::vector<std::size_t> s;
    for (std::size_t p = 0;; p += tiling.tile - tiling.overlap) {
      if (p + t >= extent) {
        s.push_back(extent - t);
        break;
      }
      s.push_back(p);
    }
    return s;
  };
  const std::size_t th = std::min(tiling.tile, h), tw = std::min(tiling.tile, w);
  std::vector<double> sum(h * w, 0.0), count(h * w, 0.0);
  for (std::size_t r0 : starts(h))
    for (std::size_t c0 : starts(w)) {
      const GrayImage one[] = {crop(noisy, r0, c0, th, tw)};
      const GrayImage out = from_tensor(model.denoise(to_tensor<float>(one)));
      for (std::size_t r = 0; r < th; ++r)
        for (std::size_t c = 0; c < tw; ++c) {
          sum[(r0 + r) * w + c0 + c] += out.at(r, c);
          count[(r0 + r) * w + c0 + c] += 1.0;
        }
    }
  GrayImage out(h, w);
  for (std::size_t i = 0; i < h * w; ++i) out.pixels[i] = static_cast<float>(sum[i] / count[i]);
  return clamped(out);
}

ReceptiveTrace trace_receptive_field(Model<float>& model, const GrayImage& image, std::size_t row,
                                     std::size_t col, std::size_t upto_layer) {
  if (row >= image.height || col >= image.width)
    throw UsageError("trace-rf: pixel (" + std::to_string(row) + "," + std::to_string(col) +
                     ") lies outside the " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " image");
  ForwardTrace ft;
  const GrayImage one[] = {image};
  model.denoise(to_tensor<float>(one), &ft);
  std::vector<const ForwardTrace::Layer*> path;
  for (const auto& l : ft.layers)
    if (path.empty() || l.name.rfind("stage", 0) == 0) path.push_back(&l);
  if (upto_layer < 1 || upto_layer > path.size())
    throw UsageError("trace-rf: layer " + std::to_string(upto_layer) + " out of range 1.." +
                     std::to_string(path.size()));
  ReceptiveTrace out;
  for (std::size_t L = 1; L <= upto_layer; ++L) {
    Mask m(image.height, image.width);
    m.set(row, col);
    for (std::size_t l = L; l >= 1; --l) m = receptive_mask_step(m, &path[l - 1]->graphs->at(0));
    out.layer_names.push_back(path[L - 1]->name);
    out.masks.push_back(std::move(m));
  }
  return out;
}

GrayImage mask_image(const Mask& mask) {
  GrayImage img(mask.height, mask.width);
  for (std::size_t i = 0; i < mask.cells.size(); ++i) img.pixels[i] = mask.cells[i] ? 1.0f : 0.0f;
  return img;
}

std::string hex_digest(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string content_digest(const std::vector<std::uint8_t>& bytes) {
  return hex_digest(fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
}

std::string EvalReport::to_tsv() const {
  std::ostringstream os;
  os << "image\tpsnr_noisy_db\tpsnr_denoised_db\n";
  for (const auto& r : rows) os << r.image << '\t' << format_psnr(r.psnr_noisy) << '\t' << format_psnr(r.psnr_denoised) << '\n';
  os << "average\t" << format_psnr(average_noisy) << '\t' << format_psnr(average_denoised) << '\n';
  os << "# config_digest\t" << config_digest << '\n';
  os << "# checkpoint_digest\t" << checkpoint_digest << '\n';
  os << "# wall_seconds\t" << format_double(wall_seconds) << '\n';
  return os.str();
}

std::vector<GrayImage> eval_noisy(const std::vector<GrayImage>& clean, const EvalOptions& opt) {
  std::vector<GrayImage> out;
  for (std::size_t i = 0; i < clean.size(); ++i)
    out.push_back(add_awgn(clean[i], NoiseConfig{opt.sigma, substream_seed(opt.seed, "eval_noise", {i})}));
  return out;
}

EvalReport evaluate(const Checkpoint& ck, const std::vector<GrayImage>& clean,
                    const std::vector<std::string>& names, const EvalOptions& opt) {
  if (clean.empty()) throw UsageError("eval: no images");
  if (names.size() != clean.size()) throw UsageError("eval: one name per image required");
  const auto t0 = std::chrono::steady_clock::now();
  Model<float> model = restore_model<float>(ck);
  const auto noisy = eval_noisy(clean, opt);
  EvalReport rep;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    EvalRow row{names[i], psnr(clean[i], noisy[i]), psnr(clean[i], denoise_image(model, noisy[i], opt.tiling))};
    rep.average_noisy += row.psnr_noisy;
    rep.average_denoised += row.psnr_denoised;
    rep.rows.push_back(std::move(row));
  }
  rep.average_noisy /= static_cast<double>(rep.rows.size());
  rep.average_denoised /= static_cast<double>(rep.rows.size());
  rep.config_digest = hex_digest(fnv1a64(ck.config_text));
  rep.checkpoint_digest = content_digest(ck.serialize());
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

void check_ablation_pair(const NetworkConfig& a, const TrainConfig& ta, const NetworkConfig& b,
                         const TrainConfig& tb) {
  NetworkConfig bb = b;
  bb.nlg.k = a.nlg.k;
  if (!(a == bb)) throw ConfigError("ablate: network configs differ in more than nlg.k");
  if (!(ta == tb)) throw ConfigError("ablate: training configs differ");
}

std::string AblationReport::to_tsv() const {
  std::ostringstream os;
  os << "k\tpsnr_noisy_db\tpsnr_denoised_db\n";
  for (std::size_t i = 0; i < k_values.size(); ++i)
    os << k_values[i] << '\t' << format_psnr(reports[i].average_noisy) << '\t'
       << format_psnr(reports[i].average_denoised) << '\n';
  if (reports.size() >= 2) {
    const double diff = reports.back().average_denoised - reports.front().average_denoised;
    os << "difference\t\t" << format_double(diff) << '\n';
    os << "# expectation\tk=" << k_values.back() << " average >= k=" << k_values.front() << " average\t"
       << (diff >= 0.0 ? "observed" : "not observed") << '\n';
  }
  for (std::size_t i = 0; i < k_values.size(); ++i)
    os << "# k=" << k_values[i] << " checkpoint_digest\t" << reports[i].checkpoint_digest << '\n';
  return os.str();
}

AblationReport ablation_compare(const NetworkConfig& net, const TrainConfig& train, const TrainData& data,
                                const std::vector<std::size_t>& k_values,
                                const std::vector<GrayImage>& eval_clean,
                                const std::vector<std::string>& eval_names, const EvalOptions& opt,
                                std::ostream* log) {
  if (k_values.empty()) throw UsageError("ablate: no k values");
  AblationReport rep;
  std::vector<NetworkConfig> nets;
  for (std::size_t k : k_values) {
    NetworkConfig n = net;
    n.nlg.k = k;
    n.validate();
    if (!nets.empty()) check_ablation_pair(nets.front(), train, n, train);
    nets.push_back(n);
  }
  for (std::size_t i = 0; i < k_values.size(); ++i) {
    if (log) *log << "ablate: training k=" << k_values[i] << '\n';
    TrainRun run;
    const TrainResult res = train_loop(nets[i], train, data, run);
    rep.k_values.push_back(k_values[i]);
    rep.reports.push_back(evaluate(res.checkpoint, eval_clean, eval_names, opt));
  }
  return rep;
}

GradCheckReport model_gradcheck(const NetworkConfig& net, const ModelGradCheckOptions& opt) {
  Model<double> model(net);
  net.nlg.check_viable(opt.height, opt.width);
  CounterRng rng(substream_seed(opt.seed, "gradcheck"));
  Tensor<double> x(Shape{opt.batch, 1, opt.height, opt.width});
  Tensor<double> target = Tensor<double>::zeros_like(x);
  for (auto& v : x.data()) v = rng.uniform();
  for (auto& v : target.data()) v = rng.uniform(-0.2, 0.2);
  // A zero head would block every gradient upstream of it.
  for (auto& p : model.store().parameters())
    if (p.name == "head.w" || p.name == "head.b")
      p.value = uniform_tensor<double>(p.value.shape(), 1.0 / static_cast<double>(9 * net.trunk_channels), rng);
  GraphCache cache;
  GraphCache* cache_ptr = opt.fixed_graph ? &cache : nullptr;
  LossBuilder build = [&](Tape<double>& tape) {
    auto out = model.forward(tape, tape.constant(x), Mode::kTrain, cache_ptr);
    return loss(out.noise_estimate, tape.constant(target));
  };
  std::vector<Parameter<double>*> params;
  for (auto& p : model.store().parameters()) params.push_back(&p);
  return finite_difference_check(build, params, opt.check);
}

}  // namespace gcnn
