#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gcnn/gcnn.h"

namespace {

constexpr int kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3;

struct Failure {
  int code;
};

int exit_code(gcnn_status s) {
  switch (s) {
    case GCNN_OK: return kExitOk;
    case GCNN_ERR_USAGE:
    case GCNN_ERR_CONFIG: return kExitUsage;
    case GCNN_ERR_NUMERIC: return kExitNumeric;
    default: return kExitData;
  }
}

void check(gcnn_status s) {
  if (s == GCNN_OK) return;
  std::cerr << "gcnn: " << gcnn_status_name(s) << ": " << gcnn_last_error() << '\n';
  throw Failure{exit_code(s)};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  gcnn_string_free(s);
  return out;
}

class Config {
 public:
  explicit Config(const std::string& path) {
    check(path.empty() ? gcnn_config_create(&cfg_) : gcnn_config_load(path.c_str(), &cfg_));
  }
  ~Config() { gcnn_config_free(cfg_); }
  Config(const Config&) = delete;
  Config& operator=(const Config&) = delete;
  void set(const char* section, const char* key, const std::string& v) {
    check(gcnn_config_set(cfg_, section, key, v.c_str()));
  }
  std::string text() const {
    char* t = nullptr;
    check(gcnn_config_to_text(cfg_, &t));
    return take(t);
  }
  const gcnn_config* get() const { return cfg_; }

 private:
  gcnn_config* cfg_ = nullptr;
};

class Model {
 public:
  explicit Model(const std::string& checkpoint) { check(gcnn_model_load(checkpoint.c_str(), &m_)); }
  explicit Model(const Config& cfg) { check(gcnn_model_create(cfg.get(), &m_)); }
  ~Model() { gcnn_model_free(m_); }
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  gcnn_model* get() { return m_; }
  std::string config_text() const {
    char* t = nullptr;
    check(gcnn_model_config_text(m_, &t));
    return take(t);
  }

 private:
  gcnn_model* m_ = nullptr;
};

struct Common {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::optional<double> sigma;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k;
  std::optional<std::size_t> window;
  bool quiet = false;
};

void print_resolved(const std::string& text, std::optional<std::uint64_t> seed) {
  std::cerr << "# resolved config\n" << text;
  if (seed) std::cerr << "# seed " << *seed << '\n';
  std::cerr << "# end config\n";
}

// Applies the command-line overrides and echoes the result.
void apply_overrides(Config& cfg, const Common& c) {
  if (c.sigma) cfg.set("train", "sigma", std::to_string(*c.sigma));
  if (c.seed) {
    cfg.set("train", "seed", std::to_string(*c.seed));
    cfg.set("network", "seed", std::to_string(*c.seed));
  }
  if (c.k) cfg.set("nlg", "k", std::to_string(*c.k));
  if (c.window) cfg.set("nlg", "window_radius", std::to_string(*c.window));
}

std::uint64_t config_seed(const std::string& text, const char* section) {
  std::string current;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.front() == '[') current = line.substr(1, line.size() - 2);
    else if (current == section && line.rfind("seed = ", 0) == 0) return std::stoull(line.substr(7));
  }
  return 0;
}

void write_or_print(const std::string& text, const std::string& dir, const std::string& file) {
  if (dir.empty()) {
    std::cout << text;
    return;
  }
  std::filesystem::create_directories(dir);
  const auto path = std::filesystem::path(dir) / file;
  std::ofstream f(path);
  f << text;
  if (!f) {
    std::cerr << "gcnn: i/o error: cannot write '" << path.string() << "'\n";
    throw Failure{kExitData};
  }
  std::cout << text;
  std::cerr << "wrote " << path.string() << '\n';
}

void add_common(CLI::App* app, Common& c, bool with_config, bool with_checkpoint) {
  if (with_config) app->add_option("--config", c.config, "Config file ([network], [nlg], [train])")->check(CLI::ExistingFile);
  if (with_checkpoint) app->add_option("--checkpoint", c.checkpoint, "Checkpoint file")->check(CLI::ExistingFile);
}

void add_overrides(CLI::App* app, Common& c, bool sigma) {
  if (sigma) app->add_option("--sigma", c.sigma, "Noise level on the 0..255 scale")->check(CLI::NonNegativeNumber);
  app->add_option("--seed", c.seed, "Master seed");
  app->add_option("--k", c.k, "Non-local neighbours per pixel");
  app->add_option("--window", c.window, "Search window radius in pixels");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-convolutional image denoiser"};
  app.require_subcommand(1);

  Common c;
  std::string manifest, eval_manifest, resume, image, pixel;
  std::vector<std::string> inputs;
  std::uint64_t stop_after = 0;
  std::size_t tile = 0, overlap = 16, layers = 4, max_per_block = 0, k_compare = 8;
  std::optional<bool> fixed_graph;

  auto* train = app.add_subcommand("train", "Train a model");
  add_common(train, c, true, false);
  add_overrides(train, c, true);
  train->add_option("--manifest", manifest, "Training image list (default: synthetic images)")->check(CLI::ExistingFile);
  train->add_option("--out", c.out, "Output directory for checkpoints and metrics")->required();
  train->add_option("--resume", resume, "Resume from this checkpoint")->check(CLI::ExistingFile);
  train->add_option("--stop-after", stop_after, "Stop once this global step is reached");
  train->add_flag("--quiet", c.quiet, "No per-step progress");

  auto* denoise = app.add_subcommand("denoise", "Denoise images with a checkpoint");
  add_common(denoise, c, false, true);
  denoise->get_option("--checkpoint")->required();
  denoise->add_option("--out", c.out, "Output directory")->required();
  denoise->add_option("--tile", tile, "Tile extent for tiled inference (0: whole image)");
  denoise->add_option("--overlap", overlap, "Tile overlap");
  denoise->add_option("images", inputs, "Noisy images (PGM or PNG)")->required()->check(CLI::ExistingFile);

  auto* noise = app.add_subcommand("add-noise", "Write AWGN-corrupted copies of images");
  add_overrides(noise, c, true);
  noise->get_option("--sigma")->required();
  noise->add_option("--out", c.out, "Output directory")->required();
  noise->add_option("images", inputs, "Clean images")->required()->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "PSNR report over a manifest of clean images");
  add_common(eval, c, false, true);
  eval->get_option("--checkpoint")->required();
  eval->add_option("--manifest", manifest, "Clean image list")->required()->check(CLI::ExistingFile);
  eval->add_option("--sigma", c.sigma, "Noise level on the 0..255 scale")->check(CLI::NonNegativeNumber);
  eval->add_option("--seed", c.seed, "Noise seed");
  eval->add_option("--tile", tile, "Tile extent for tiled inference (0: whole image)");
  eval->add_option("--out", c.out, "Directory for report.tsv");

  auto* trace = app.add_subcommand("trace-rf", "Receptive-field masks of one output pixel");
  add_common(trace, c, false, true);
  trace->get_option("--checkpoint")->required();
  trace->add_option("--image", image, "Input image")->required()->check(CLI::ExistingFile);
  trace->add_option("--pixel", pixel, "Pixel as R,C")->required();
  trace->add_option("--layers", layers, "Number of graph layers to trace");
  trace->add_option("--out", c.out, "Directory for layer_<L>.pgm masks")->required();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the full model in 64-bit");
  add_common(grad, c, true, false);
  add_overrides(grad, c, false);
  grad->add_option("--fixed-graph", fixed_graph,
                   "Freeze graph selection across perturbations (default: train.fixed_graph_in_gradcheck)");
  grad->add_option("--max-per-block", max_per_block, "Coordinates checked per parameter block (0: all)");

  auto* ablate = app.add_subcommand("ablate", "Paired k=0 vs k=N training and evaluation");
  add_common(ablate, c, true, false);
  add_overrides(ablate, c, true);
  ablate->get_option("--k")->description("Non-local neighbours of the second run (first run uses 0)");
  ablate->add_option("--manifest", manifest, "Training image list (default: synthetic images)")->check(CLI::ExistingFile);
  ablate->add_option("--eval-manifest", eval_manifest, "Evaluation image list (default: synthetic)")->check(CLI::ExistingFile);
  ablate->add_option("--out", c.out, "Directory for ablation.tsv");
  ablate->add_flag("--quiet", c.quiet, "No progress output");

  auto* params = app.add_subcommand("params", "Parameter census");
  add_common(params, c, true, true);
  add_overrides(params, c, false);
  params->excludes(params->get_option("--checkpoint"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train) {
      Config cfg(c.config);
      apply_overrides(cfg, c);
      const std::string text = cfg.text();
      print_resolved(text, config_seed(text, "train"));
      gcnn_train_summary s{};
      check(gcnn_train(cfg.get(), manifest.c_str(), c.out.c_str(), resume.c_str(), stop_after, c.quiet ? 0 : 1, &s));
      std::cout << "steps\t" << s.steps << "\nfinal_loss\t" << s.final_loss << "\ncheckpoint\t"
                << (std::filesystem::path(c.out) / "checkpoint.gcnn").string() << '\n';
    } else if (*denoise) {
      Model m(c.checkpoint);
      const std::string text = m.config_text();
      print_resolved(text, config_seed(text, "network"));
      std::filesystem::create_directories(c.out);
      for (const auto& in : inputs) {
        const auto out = (std::filesystem::path(c.out) / std::filesystem::path(in).filename()).string();
        check(gcnn_denoise_file(m.get(), in.c_str(), out.c_str(), tile, overlap));
        std::cout << in << "\t" << out << '\n';
      }
    } else if (*noise) {
      const std::uint64_t seed = c.seed.value_or(1);
      std::cerr << "# sigma " << *c.sigma << "\n# seed " << seed << '\n';
      std::filesystem::create_directories(c.out);
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto out = (std::filesystem::path(c.out) / std::filesystem::path(inputs[i]).filename()).string();
        check(gcnn_add_noise_file(inputs[i].c_str(), out.c_str(), *c.sigma, seed + i));
        std::cout << inputs[i] << "\t" << out << '\n';
      }
    } else if (*eval) {
      Model m(c.checkpoint);
      const std::string text = m.config_text();
      const double sigma = c.sigma.value_or(25.0);
      const std::uint64_t seed = c.seed.value_or(1);
      print_resolved(text + "# eval sigma " + std::to_string(sigma) + "\n", seed);
      char* report = nullptr;
      check(gcnn_eval(c.checkpoint.c_str(), manifest.c_str(), sigma, seed, tile, &report));
      write_or_print(take(report), c.out, "report.tsv");
    } else if (*trace) {
      std::size_t row = 0, col = 0;
      if (std::sscanf(pixel.c_str(), "%zu,%zu", &row, &col) != 2) {
        std::cerr << "gcnn: usage error: --pixel expects R,C\n";
        return kExitUsage;
      }
      Model m(c.checkpoint);
      const std::string text = m.config_text();
      print_resolved(text, config_seed(text, "network"));
      char* summary = nullptr;
      check(gcnn_trace_rf(m.get(), image.c_str(), row, col, layers, c.out.c_str(), &summary));
      std::cout << take(summary);
    } else if (*grad) {
      Config cfg(c.config);
      apply_overrides(cfg, c);
      const std::string text = cfg.text();
      const std::uint64_t seed = c.seed.value_or(config_seed(text, "train"));
      print_resolved(text, seed);
      char* report = nullptr;
      int passed = 0;
      check(gcnn_gradcheck(cfg.get(), fixed_graph ? (*fixed_graph ? 1 : 0) : -1, seed, max_per_block, &report, &passed));
      std::cout << take(report);
      return passed ? kExitOk : kExitNumeric;
    } else if (*ablate) {
      Config cfg(c.config);
      const std::size_t k = c.k.value_or(k_compare);
      c.k.reset();
      apply_overrides(cfg, c);
      const std::string text = cfg.text();
      const std::uint64_t seed = config_seed(text, "train");
      print_resolved(text + "# ablation k 0," + std::to_string(k) + "\n", seed);
      const std::size_t ks[2] = {0, k};
      const double sigma = c.sigma.value_or(25.0);
      char* report = nullptr;
      check(gcnn_ablate(cfg.get(), manifest.c_str(), ks, 2, eval_manifest.c_str(), sigma, seed, c.quiet ? 0 : 1,
                        &report));
      write_or_print(take(report), c.out, "ablation.tsv");
    } else if (*params) {
      std::optional<Config> cfg;
      std::optional<Model> m;
      if (!c.checkpoint.empty()) {
        m.emplace(c.checkpoint);
        const std::string text = m->config_text();
        print_resolved(text, config_seed(text, "network"));
      } else {
        cfg.emplace(c.config);
        apply_overrides(*cfg, c);
        const std::string text = cfg->text();
        print_resolved(text, config_seed(text, "network"));
        m.emplace(*cfg);
      }
      char* census = nullptr;
      check(gcnn_model_census(m->get(), &census));
      std::cout << take(census);
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return kExitOk;
}
