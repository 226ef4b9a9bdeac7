/* C interface to the AOT-GAN inpainting library.
 *
 * Every function returns an aot_status. On failure a human-readable message
 * is available from aot_last_error() on the calling thread until the next
 * call into the library on that thread. Strings returned through char**
 * out-parameters are owned by the caller and released with aot_string_free().
 */
#ifndef AOTGAN_AOTGAN_H
#define AOTGAN_AOTGAN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define AOT_API __declspec(dllexport)
#else
#define AOT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum aot_status {
  AOT_OK = 0,
  AOT_ERR_INVALID_ARGUMENT = 1,
  AOT_ERR_NOT_FOUND = 2,
  AOT_ERR_SHAPE_MISMATCH = 3,
  AOT_ERR_INCOMPATIBLE_CHECKPOINT = 4,
  AOT_ERR_CONFIG = 5,
  AOT_ERR_DIVERGENCE = 6,
  AOT_ERR_DECODE = 7,
  AOT_ERR_UNREACHABLE_BUCKET = 8,
  AOT_ERR_IO = 9,
  AOT_ERR_INTERNAL = 10
} aot_status;

AOT_API const char* aot_last_error(void);
AOT_API const char* aot_status_name(aot_status status);
AOT_API void aot_string_free(char* s);

/* Configuration: a preset plus JSON file plus key=value overrides. */
typedef struct aot_config aot_config;

/* path may be NULL (built-in "paper" defaults). */
AOT_API aot_status aot_config_load(const char* path, aot_config** out);
/* "section.key=value"; unknown keys fail with AOT_ERR_CONFIG. */
AOT_API aot_status aot_config_override(aot_config* config, const char* assignment);
AOT_API aot_status aot_config_to_json(const aot_config* config, char** out_json);
AOT_API void aot_config_free(aot_config* config);

/* Inference model loaded from a training checkpoint. Immutable once loaded;
 * safe to share across threads. */
typedef struct aot_model aot_model;

AOT_API aot_status aot_model_load(const char* checkpoint_path, aot_model** out);
AOT_API void aot_model_free(aot_model* model);
/* SHA-256 of the checkpoint file; valid while the model lives. */
AOT_API const char* aot_model_fingerprint(const aot_model* model);
/* JSON summary: fingerprint, blocks, rates, width, residual_mode. */
AOT_API aot_status aot_model_info(const aot_model* model, char** out_json);

/* Reads an RGB image and a single-channel mask PNG (255 = hole) and writes
 * the composed result as PNG. max_side <= 0 runs at native resolution.
 * hole_ratio may be NULL. */
AOT_API aot_status aot_inpaint_files(const aot_model* model, const char* image_path,
                                     const char* mask_path, const char* out_path, int max_side,
                                     double* hole_ratio);
/* rgb: width*height*3 interleaved bytes; mask: width*height bytes (nonzero = hole);
 * out_rgb: width*height*3 bytes written on success. */
AOT_API aot_status aot_inpaint_rgb8(const aot_model* model, const uint8_t* rgb,
                                    const uint8_t* mask, int width, int height, int max_side,
                                    uint8_t* out_rgb);

typedef struct aot_loss_report {
  long step;
  double adv_g;
  double adv_d;
  double rec;
  double per;
  double sty;
  double total;
} aot_loss_report;

typedef void (*aot_step_callback)(const aot_loss_report* report, void* user);

/* Trains on the images under corpus_dir (split chosen by data.split) and
 * writes checkpoints and losses.csv to out_dir. resume_path may be NULL.
 * callback may be NULL. */
AOT_API aot_status aot_train(const aot_config* config, const char* corpus_dir, const char* out_dir,
                             const char* resume_path, aot_step_callback callback, void* user);

/* Scores a checkpoint over the configured buckets; writes the CSV report to
 * csv_path and the text table next to it (".txt"). out_table may be NULL. */
AOT_API aot_status aot_evaluate(const aot_config* config, const char* checkpoint_path,
                                const char* corpus_dir, const char* csv_path, char** out_table);

/* Writes a free-form mask PNG whose hole ratio lies in [low, high]. */
AOT_API aot_status aot_generate_mask(int height, int width, double low, double high,
                                     uint64_t seed, const char* out_path, double* hole_ratio);

/* Writes a float32 tensor archive: the generator weights of checkpoint_path,
 * or the configured feature extractor when checkpoint_path is NULL. */
AOT_API aot_status aot_export_weights(const aot_config* config, const char* checkpoint_path,
                                      const char* out_path);

/* HTTP service (POST /api/v1/inpaint, GET /api/v1/model). */
typedef struct aot_server aot_server;

/* checkpoint_path may be NULL: the server then answers 503 until a model is loaded. */
AOT_API aot_status aot_server_create(const aot_config* config, const char* checkpoint_path,
                                     aot_server** out);
AOT_API aot_status aot_server_load_model(aot_server* server, const char* checkpoint_path);
/* Binds serve.host:serve.port (0 = any free port) and serves in the background. */
AOT_API aot_status aot_server_start(aot_server* server, int* bound_port);
AOT_API aot_status aot_server_stop(aot_server* server);
AOT_API void aot_server_free(aot_server* server);

#ifdef __cplusplus
}
#endif

#endif /* AOTGAN_AOTGAN_H */
