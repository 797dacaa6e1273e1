#include "gcnn/gcnn.h"

#include <cstring>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include "gcnn/eval.hpp"
#include "gcnn/train.hpp"

struct gcnn_config {
  gcnn::KeyValueDoc doc;
  gcnn::NetworkConfig net;
  gcnn::TrainConfig train;
};

struct gcnn_model {
  gcnn::Model<float> model;
  gcnn::Checkpoint source;  // extra tensors and config carried through save
};

namespace {

thread_local std::string g_last_error;

gcnn_status status_of(gcnn::ErrorKind k) {
  using gcnn::ErrorKind;
  switch (k) {
    case ErrorKind::kShape: return GCNN_ERR_SHAPE;
    case ErrorKind::kConfig: return GCNN_ERR_CONFIG;
    case ErrorKind::kSizing: return GCNN_ERR_SIZING;
    case ErrorKind::kFormat: return GCNN_ERR_FORMAT;
    case ErrorKind::kIo: return GCNN_ERR_IO;
    case ErrorKind::kNumeric: return GCNN_ERR_NUMERIC;
    case ErrorKind::kUsage: return GCNN_ERR_USAGE;
  }
  return GCNN_ERR_INTERNAL;
}

template <class F>
gcnn_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return GCNN_OK;
  } catch (const gcnn::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return GCNN_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return GCNN_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return GCNN_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw gcnn::UsageError(std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string opt_str(const char* s) { return s ? std::string(s) : std::string(); }

void resolve(gcnn_config& c) {
  for (const auto& s : c.doc.sections())
    if (s != "network" && s != "nlg" && s != "train")
      throw gcnn::ConfigError("config: unknown section [" + s + "]");
  c.net = gcnn::read_network_config(c.doc);
  c.train = gcnn::read_train_config(c.doc);
}

std::string resolved_text(const gcnn_config& c) {
  gcnn::KeyValueDoc doc;
  gcnn::write_network_config(c.net, doc);
  gcnn::write_train_config(c.train, doc);
  return doc.to_text();
}

gcnn::Checkpoint model_checkpoint(const gcnn_model& m) {
  gcnn::Checkpoint ck;
  ck.config_text = m.source.config_text;
  gcnn::store_model(m.model, ck);
  for (const auto& rec : m.source.tensors)
    if (!ck.find(rec.name)) ck.tensors.push_back(rec);
  return ck;
}

}  // namespace

extern "C" {

const char* gcnn_last_error(void) { return g_last_error.c_str(); }

const char* gcnn_status_name(gcnn_status s) {
  switch (s) {
    case GCNN_OK: return "ok";
    case GCNN_ERR_USAGE: return "usage error";
    case GCNN_ERR_CONFIG: return "config error";
    case GCNN_ERR_SHAPE: return "shape error";
    case GCNN_ERR_SIZING: return "sizing error";
    case GCNN_ERR_FORMAT: return "format error";
    case GCNN_ERR_IO: return "i/o error";
    case GCNN_ERR_NUMERIC: return "numeric failure";
    case GCNN_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void gcnn_string_free(char* s) { std::free(s); }

gcnn_status gcnn_config_create(gcnn_config** out) {
  return guarded([&] {
    require(out, "out");
    auto c = std::make_unique<gcnn_config>();
    resolve(*c);
    *out = c.release();
  });
}

gcnn_status gcnn_config_load(const char* path, gcnn_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    auto c = std::make_unique<gcnn_config>();
    c->doc = gcnn::KeyValueDoc::load(path);
    resolve(*c);
    *out = c.release();
  });
}

gcnn_status gcnn_config_set(gcnn_config* cfg, const char* section, const char* key, const char* value) {
  return guarded([&] {
    require(cfg, "cfg");
    require(section, "section");
    require(key, "key");
    require(value, "value");
    gcnn_config next = *cfg;
    next.doc.set(section, key, value);
    resolve(next);
    *cfg = std::move(next);
  });
}

gcnn_status gcnn_config_to_text(const gcnn_config* cfg, char** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    *out = dup_string(resolved_text(*cfg));
  });
}

void gcnn_config_free(gcnn_config* cfg) { delete cfg; }

gcnn_status gcnn_model_create(const gcnn_config* cfg, gcnn_model** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    *out = new gcnn_model{gcnn::Model<float>(cfg->net), {}};
  });
}

gcnn_status gcnn_model_load(const char* path, gcnn_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    gcnn::Checkpoint ck = gcnn::Checkpoint::load(path);
    gcnn::Model<float> model = gcnn::restore_model<float>(ck);
    *out = new gcnn_model{std::move(model), std::move(ck)};
  });
}

gcnn_status gcnn_model_save(const gcnn_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    model_checkpoint(*model).save(path);
  });
}

gcnn_status gcnn_model_parameter_count(const gcnn_model* model, uint64_t* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = model->model.parameter_count();
  });
}

gcnn_status gcnn_model_census(const gcnn_model* model, char** out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    std::ostringstream os;
    os << "module\tparameters\n";
    for (const auto& e : model->model.census()) os << e.module << '\t' << e.count << '\n';
    os << "total\t" << model->model.parameter_count() << '\n';
    *out = dup_string(os.str());
  });
}

gcnn_status gcnn_model_config_text(const gcnn_model* model, char** out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = dup_string(model_checkpoint(*model).config_text);
  });
}

void gcnn_model_free(gcnn_model* model) { delete model; }

gcnn_status gcnn_train(const gcnn_config* cfg, const char* manifest, const char* out_dir, const char* resume_path,
                       uint64_t stop_after, int verbose, gcnn_train_summary* summary) {
  return guarded([&] {
    require(cfg, "cfg");
    const gcnn::TrainData data = gcnn::load_train_data(cfg->train, opt_str(manifest));
    gcnn::TrainRun run;
    run.out_dir = opt_str(out_dir);
    if (resume_path && *resume_path) run.resume = gcnn::Checkpoint::load(resume_path);
    run.stop_after = stop_after;
    run.log = verbose ? &std::cerr : nullptr;
    const gcnn::TrainResult res = gcnn::train_loop(cfg->net, cfg->train, data, run);
    if (summary) {
      summary->steps = res.steps;
      summary->final_loss = res.metrics.empty() ? 0.0 : res.metrics.back().loss;
      summary->best_val_psnr = res.best_val_psnr;
    }
  });
}

gcnn_status gcnn_denoise_file(gcnn_model* model, const char* in_path, const char* out_path, size_t tile,
                              size_t overlap) {
  return guarded([&] {
    require(model, "model");
    require(in_path, "in_path");
    require(out_path, "out_path");
    gcnn::TileOptions t;
    t.enabled = tile > 0;
    if (t.enabled) {
      t.tile = tile;
      t.overlap = overlap;
    }
    gcnn::save_image(gcnn::denoise_image(model->model, gcnn::load_image(in_path), t), out_path);
  });
}

gcnn_status gcnn_add_noise_file(const char* in_path, const char* out_path, double sigma, uint64_t seed) {
  return guarded([&] {
    require(in_path, "in_path");
    require(out_path, "out_path");
    gcnn::save_image(gcnn::add_awgn(gcnn::load_image(in_path), gcnn::NoiseConfig{sigma, seed}), out_path);
  });
}

gcnn_status gcnn_eval(const char* checkpoint_path, const char* manifest, double sigma, uint64_t seed, size_t tile,
                      char** report) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint_path");
    require(manifest, "manifest");
    require(report, "report");
    const gcnn::Checkpoint ck = gcnn::Checkpoint::load(checkpoint_path);
    std::vector<gcnn::GrayImage> images;
    std::vector<std::string> names;
    for (const auto& p : gcnn::read_manifest(manifest)) {
      images.push_back(gcnn::load_image(p));
      names.push_back(std::filesystem::path(p).filename().string());
    }
    gcnn::EvalOptions opt;
    opt.sigma = sigma;
    opt.seed = seed;
    opt.tiling.enabled = tile > 0;
    if (tile > 0) opt.tiling.tile = tile;
    *report = dup_string(gcnn::evaluate(ck, images, names, opt).to_tsv());
  });
}

gcnn_status gcnn_trace_rf(gcnn_model* model, const char* image_path, size_t row, size_t col, size_t upto_layer,
                          const char* out_dir, char** summary) {
  return guarded([&] {
    require(model, "model");
    require(image_path, "image_path");
    const auto trace =
        gcnn::trace_receptive_field(model->model, gcnn::load_image(image_path), row, col, upto_layer);
    std::ostringstream os;
    os << "layer\tname\tactive_pixels\n";
    for (std::size_t i = 0; i < trace.masks.size(); ++i) {
      os << i + 1 << '\t' << trace.layer_names[i] << '\t' << trace.masks[i].count() << '\n';
      if (out_dir && *out_dir) {
        std::filesystem::create_directories(out_dir);
        gcnn::save_image(gcnn::mask_image(trace.masks[i]),
                         (std::filesystem::path(out_dir) / ("layer_" + std::to_string(i + 1) + ".pgm")).string());
      }
    }
    if (summary) *summary = dup_string(os.str());
  });
}

gcnn_status gcnn_gradcheck(const gcnn_config* cfg, int fixed_graph, uint64_t seed, size_t max_per_block,
                           char** report, int* passed) {
  return guarded([&] {
    require(cfg, "cfg");
    gcnn::ModelGradCheckOptions opt;
    opt.fixed_graph = fixed_graph < 0 ? cfg->train.fixed_graph_in_gradcheck : fixed_graph != 0;
    opt.seed = seed;
    opt.check.max_per_block = max_per_block;
    const gcnn::GradCheckReport rep = gcnn::model_gradcheck(cfg->net, opt);
    if (report) *report = dup_string(rep.to_string());
    if (passed) *passed = rep.passed ? 1 : 0;
  });
}

gcnn_status gcnn_ablate(const gcnn_config* cfg, const char* manifest, const size_t* k_values, size_t n_k,
                        const char* eval_manifest, double sigma, uint64_t seed, int verbose, char** report) {
  return guarded([&] {
    require(cfg, "cfg");
    require(k_values, "k_values");
    require(report, "report");
    const gcnn::TrainData data = gcnn::load_train_data(cfg->train, opt_str(manifest));
    std::vector<gcnn::GrayImage> images;
    std::vector<std::string> names;
    if (eval_manifest && *eval_manifest) {
      for (const auto& p : gcnn::read_manifest(eval_manifest)) {
        images.push_back(gcnn::load_image(p));
        names.push_back(std::filesystem::path(p).filename().string());
      }
    } else {
      for (std::uint64_t i = 0; i < 4; ++i) {
        images.push_back(gcnn::make_synthetic_image(gcnn::substream_seed(seed, "ablate_eval", {i}), 64, 64));
        names.push_back("synthetic_" + std::to_string(i));
      }
    }
    gcnn::EvalOptions opt;
    opt.sigma = sigma;
    opt.seed = seed;
    const auto rep = gcnn::ablation_compare(cfg->net, cfg->train, data, std::vector<std::size_t>(k_values, k_values + n_k),
                                            images, names, opt, verbose ? &std::cerr : nullptr);
    *report = dup_string(rep.to_tsv());
  });
}

}  // extern "C"
