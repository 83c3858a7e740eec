/* traitlens: image -> Big Five trait classifiers on a synthetic tagged corpus.
 *
 * Plain C interface over the C++ core. Every call returns a tl_status; on
 * failure tl_last_error() describes the problem (per thread, valid until the
 * next failing call on that thread). Handles are opaque and owned by the
 * caller; free them with the matching *_free function. Networks run in single
 * precision. */
#ifndef TRAITLENS_H
#define TRAITLENS_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TL_API __declspec(dllexport)
#else
#define TL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  TL_OK = 0,
  TL_INVALID_ARGUMENT = 1,
  TL_IO_ERROR = 2,
  TL_NUMERICAL_ERROR = 3,
  TL_INCOMPATIBLE = 4, /* checkpoint/architecture/corpus mismatch */
  TL_INTERNAL = 5
} tl_status;

typedef enum { TL_ARCH_MINI_ALEX = 0, TL_ARCH_MINI_RESNET = 1 } tl_arch;
typedef enum { TL_HEADS_ALL_IN_ONE = 0, TL_HEADS_INDEPENDENT = 1, TL_HEADS_AUXILIARY = 2 } tl_heads;
typedef enum { TL_SPLIT_ALL = -1, TL_SPLIT_TRAIN = 0, TL_SPLIT_TEST = 1 } tl_split;

/* Traits are 0..4 = O, C, E, A, N; polarity 0 = high, 1 = low. */
#define TL_NUM_TRAITS 5

typedef struct tl_corpus tl_corpus;
typedef struct tl_network tl_network;

TL_API const char* tl_last_error(void);
TL_API const char* tl_status_name(tl_status s);
TL_API const char* tl_version(void);

/* ---- corpus ---- */

typedef struct {
  uint32_t images_per_word;
  uint32_t image_size;
  uint32_t crop_size;
  double signal_strength;
  double noise_std;
  uint64_t seed;
  double train_fraction;
} tl_generator_config;

TL_API void tl_generator_config_default(tl_generator_config* cfg);
TL_API tl_status tl_generator_config_validate(const tl_generator_config* cfg);
TL_API tl_status tl_corpus_generate(const tl_generator_config* cfg, const char* out_dir, tl_corpus** out);
TL_API tl_status tl_corpus_open(const char* dir, tl_corpus** out);
TL_API size_t tl_corpus_sample_count(const tl_corpus* corpus, tl_split split);
/* Generator settings the corpus was built with. */
TL_API tl_status tl_corpus_generator(const tl_corpus* corpus, tl_generator_config* out);
TL_API void tl_corpus_free(tl_corpus* corpus);

/* ---- networks ---- */

/* trait is used only with TL_HEADS_INDEPENDENT; aux_classes only with
 * TL_HEADS_AUXILIARY. */
TL_API tl_status tl_network_build(tl_arch arch, tl_heads heads, int trait, uint32_t aux_classes,
                                  uint64_t seed, tl_network** out);
TL_API tl_status tl_network_load(const char* path, tl_network** out);
/* Backbone from a checkpoint of architecture `arch`, fresh heads seeded by
 * head_seed. TL_INCOMPATIBLE when the stored architecture differs. */
TL_API tl_status tl_network_load_backbone(const char* path, tl_arch arch, tl_heads heads, int trait,
                                          uint64_t head_seed, tl_network** out);
TL_API tl_status tl_network_save(tl_network* net, const char* path);
/* JSON descriptor {"architecture":...,"heads":...}. Writes at most cap bytes
 * including the terminator; *needed receives the full length + 1. */
TL_API tl_status tl_network_describe(const tl_network* net, char* buf, size_t cap, size_t* needed);
TL_API tl_status tl_network_heads(const tl_network* net, tl_heads* heads, int* trait);
TL_API size_t tl_network_parameter_count(tl_network* net);
TL_API void tl_network_free(tl_network* net);

/* ---- training ---- */

typedef struct {
  double base_lr;
  double momentum;
  double weight_decay;
  double dropout_p;
  uint32_t batch_size;
  uint32_t epochs;
  int finetune; /* heads learn 10x faster when nonzero */
  uint64_t seed;
  int evaluate_test;
} tl_train_config;

TL_API void tl_train_config_default(tl_arch arch, int finetune, tl_train_config* cfg);
TL_API tl_status tl_train_config_validate(const tl_train_config* cfg);

/* Called after each epoch. test_accuracy has TL_NUM_TRAITS entries (NaN for
 * traits the network does not serve) or is NULL when test evaluation is off.
 * Return 0 to stop training early. */
typedef int (*tl_epoch_callback)(uint32_t epoch, double mean_loss, const double* test_accuracy,
                                 void* user);

/* history_dir, when non-NULL, receives history.csv and accuracy.csv. */
TL_API tl_status tl_train(tl_network* net, const tl_corpus* corpus, const tl_train_config* cfg,
                          const char* history_dir, tl_epoch_callback on_epoch, void* user);

typedef struct {
  uint32_t images_per_class;
  uint32_t image_size;
  uint32_t crop_size;
  double noise_std;
  uint64_t seed;
  double train_fraction;
} tl_auxiliary_config;

TL_API void tl_auxiliary_config_default(tl_auxiliary_config* cfg);
TL_API tl_status tl_auxiliary_config_validate(const tl_auxiliary_config* cfg);
/* Trains a 10-way texture classifier and writes its checkpoint. */
TL_API tl_status tl_pretrain_auxiliary(tl_arch arch, const tl_auxiliary_config* aux,
                                       const tl_train_config* cfg, const char* checkpoint,
                                       const char* history_dir, double* test_accuracy);

/* ---- evaluation ---- */

typedef struct {
  double accuracy[TL_NUM_TRAITS]; /* fractions */
  double auc[TL_NUM_TRAITS];
  double ap[TL_NUM_TRAITS];
  size_t test_samples[TL_NUM_TRAITS];
  double average_accuracy;
} tl_metrics;

/* Either one all-in-one network or five independent networks covering every
 * trait. out_dir, when non-NULL, receives metrics.json, roc_<T>.csv,
 * pr_<T>.csv and curves.svg; config_json (may be NULL) is embedded in
 * metrics.json. */
TL_API tl_status tl_evaluate(tl_network* const* nets, size_t count, const tl_corpus* corpus,
                             const char* out_dir, const char* config_json, tl_metrics* out);

/* Top-k Test samples by the probability of (trait, polarity). */
TL_API tl_status tl_max_activations(tl_network* net, const tl_corpus* corpus, int trait, int polarity,
                                    size_t k, uint64_t* sample_ids, double* scores);

/* Penultimate features of the center view of one sample; `dim` receives the
 * feature width, out must hold at least cap values. */
TL_API tl_status tl_extract_features(tl_network* net, const tl_corpus* corpus, uint64_t sample_id,
                                     double* out, size_t cap, size_t* dim);

typedef struct {
  double perplexity;
  uint32_t iterations;
  double learning_rate;
  uint64_t seed;
} tl_tsne_config;

TL_API void tl_tsne_config_default(tl_tsne_config* cfg);
/* Embeds the top per_pole High and Low samples of each listed trait and writes
 * embedding.csv-style output to csv_path plus metadata JSON to meta_path. */
TL_API tl_status tl_tsne_project(tl_network* net, const tl_corpus* corpus, const int* traits,
                                 size_t trait_count, size_t per_pole, const tl_tsne_config* cfg,
                                 const char* csv_path, const char* meta_path, size_t* points,
                                 double* final_kl);

#ifdef __cplusplus
}
#endif

#endif /* TRAITLENS_H */
