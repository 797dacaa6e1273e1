/* C interface to the gcnn denoising engine. Every function returns a
 * gcnn_status; on failure gcnn_last_error() describes the problem for the
 * calling thread. Strings returned through char** are owned by the caller
 * and released with gcnn_string_free. */
#ifndef GCNN_GCNN_H
#define GCNN_GCNN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define GCNN_API __declspec(dllexport)
#else
#define GCNN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gcnn_status {
  GCNN_OK = 0,
  GCNN_ERR_USAGE = 1,
  GCNN_ERR_CONFIG = 2,
  GCNN_ERR_SHAPE = 3,
  GCNN_ERR_SIZING = 4,
  GCNN_ERR_FORMAT = 5,
  GCNN_ERR_IO = 6,
  GCNN_ERR_NUMERIC = 7,
  GCNN_ERR_INTERNAL = 8
} gcnn_status;

typedef struct gcnn_config gcnn_config;
typedef struct gcnn_model gcnn_model;

GCNN_API const char* gcnn_last_error(void);
GCNN_API const char* gcnn_status_name(gcnn_status status);
GCNN_API void gcnn_string_free(char* s);

/* Configuration: [network], [nlg] and [train] sections with defaults. */
GCNN_API gcnn_status gcnn_config_create(gcnn_config** out);
GCNN_API gcnn_status gcnn_config_load(const char* path, gcnn_config** out);
GCNN_API gcnn_status gcnn_config_set(gcnn_config* cfg, const char* section, const char* key, const char* value);
/* Fully resolved canonical text, every key present. */
GCNN_API gcnn_status gcnn_config_to_text(const gcnn_config* cfg, char** out);
GCNN_API void gcnn_config_free(gcnn_config* cfg);

GCNN_API gcnn_status gcnn_model_create(const gcnn_config* cfg, gcnn_model** out);
/* Loads a checkpoint written by gcnn_train or gcnn_model_save. */
GCNN_API gcnn_status gcnn_model_load(const char* path, gcnn_model** out);
GCNN_API gcnn_status gcnn_model_save(const gcnn_model* model, const char* path);
GCNN_API gcnn_status gcnn_model_parameter_count(const gcnn_model* model, uint64_t* out);
/* Tab-separated "module count" lines with a header and a total row. */
GCNN_API gcnn_status gcnn_model_census(const gcnn_model* model, char** out);
GCNN_API gcnn_status gcnn_model_config_text(const gcnn_model* model, char** out);
GCNN_API void gcnn_model_free(gcnn_model* model);

typedef struct gcnn_train_summary {
  uint64_t steps;
  double final_loss;
  double best_val_psnr;
} gcnn_train_summary;

/* manifest NULL or "": synthetic images. resume_path NULL or "": fresh run.
 * stop_after 0: run to completion. Progress goes to stderr when verbose. */
GCNN_API gcnn_status gcnn_train(const gcnn_config* cfg, const char* manifest, const char* out_dir,
                                const char* resume_path, uint64_t stop_after, int verbose,
                                gcnn_train_summary* summary);

/* tile 0 disables tiling. The result is clamped and saved as PGM or PNG. */
GCNN_API gcnn_status gcnn_denoise_file(gcnn_model* model, const char* in_path, const char* out_path,
                                       size_t tile, size_t overlap);

/* Writes a noisy copy of an image (sigma on the 0..255 scale), clamped on save. */
GCNN_API gcnn_status gcnn_add_noise_file(const char* in_path, const char* out_path, double sigma,
                                         uint64_t seed);

/* PSNR report over the images of a manifest (clean) with synthetic AWGN. */
GCNN_API gcnn_status gcnn_eval(const char* checkpoint_path, const char* manifest, double sigma, uint64_t seed,
                               size_t tile, char** report);

/* Writes layer_<L>.pgm masks into out_dir for L = 1..upto_layer and returns
 * a summary (layer, name, active pixel count). */
GCNN_API gcnn_status gcnn_trace_rf(gcnn_model* model, const char* image_path, size_t row, size_t col,
                                   size_t upto_layer, const char* out_dir, char** summary);

/* End-to-end finite-difference check of a 64-bit model with cfg's
 * architecture on random 8x8 inputs. fixed_graph: 1 freezes graph selection
 * across perturbations, 0 rebuilds graphs, -1 follows
 * train.fixed_graph_in_gradcheck. passed is set to 1 or 0. */
GCNN_API gcnn_status gcnn_gradcheck(const gcnn_config* cfg, int fixed_graph, uint64_t seed, size_t max_per_block,
                                    char** report, int* passed);

/* Trains one model per k with cfg (all else equal) and evaluates each on the
 * eval manifest, or on held-out synthetic images when it is NULL or "". */
GCNN_API gcnn_status gcnn_ablate(const gcnn_config* cfg, const char* manifest, const size_t* k_values,
                                 size_t n_k, const char* eval_manifest, double sigma, uint64_t seed, int verbose,
                                 char** report);

#ifdef __cplusplus
}
#endif

#endif
