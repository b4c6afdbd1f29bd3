#ifndef CTPLAN_H
#define CTPLAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

#define CTPLAN_OK 0

#define CTPLAN_ERR_NULL -1

#define CTPLAN_ERR_INVALID_ARGUMENT -2

#define CTPLAN_ERR_IO -3

#define CTPLAN_ERR_ARTIFACT -4

#define CTPLAN_ERR_NO_PLAN -5

#define CTPLAN_ERR_BUFFER_TOO_SMALL -6

#define CTPLAN_ERR_RUNTIME -7

#define CTPLAN_ERR_PANIC -8

#define CTPLAN_SPLIT_TRAIN 0

#define CTPLAN_SPLIT_VAL 1

#define CTPLAN_SPLIT_TEST 2

#define CTPLAN_METHOD_SYMBOLIC 0

#define CTPLAN_METHOD_TOKEN_SPACE 1

#define CTPLAN_METHOD_CHANCE 2

// Generated or loaded task dataset.
typedef struct CtplanDataset CtplanDataset;

// Fitted codebook, symbolizer, transition model and token maps.
typedef struct CtplanPipeline CtplanPipeline;

// Result of one evaluation run.
typedef struct CtplanReport CtplanReport;

// Aggregate metrics of a report. `ase` and `fsd_success_mean` are NaN
// when no task succeeded.
typedef struct CtplanMetrics {
  size_t n_tasks;
  double asacc_top1;
  double asacc_top5;
  double ase;
  double fsd_mean;
  double fsd_success_mean;
} CtplanMetrics;

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next `ctplan_*` call on the same thread.
const char *ctplan_last_error_message(void);

// Generates a standard dataset for `level` in 1..=4.
//
// # Safety
// `out` must be a valid pointer to writable storage.
int32_t ctplan_dataset_generate(uint8_t level,
                                size_t train,
                                size_t val,
                                size_t test,
                                uint64_t seed,
                                struct CtplanDataset **out);

// # Safety
// `path` must be a nul-terminated string and `out` valid for writes.
int32_t ctplan_dataset_load(const char *path, struct CtplanDataset **out);

// # Safety
// `dataset` must come from this library and `path` be nul-terminated.
int32_t ctplan_dataset_save(const struct CtplanDataset *dataset, const char *path);

// Number of tasks across all splits, or 0 for a null handle.
//
// # Safety
// `dataset` must be null or come from this library.
size_t ctplan_dataset_len(const struct CtplanDataset *dataset);

// # Safety
// `dataset` must be null or an unfreed handle from this library.
void ctplan_dataset_free(struct CtplanDataset *dataset);

// Fits a pipeline on the training split with default settings apart from
// the codebook seed and training noise.
//
// # Safety
// `dataset` must come from this library and `out` be valid for writes.
int32_t ctplan_pipeline_fit(const struct CtplanDataset *dataset,
                            uint64_t codebook_seed,
                            double sigma,
                            struct CtplanPipeline **out);

// # Safety
// `dir` must be a nul-terminated string and `out` valid for writes.
int32_t ctplan_pipeline_load(const char *dir, struct CtplanPipeline **out);

// # Safety
// `pipeline` must come from this library and `dir` be nul-terminated.
int32_t ctplan_pipeline_save(const struct CtplanPipeline *pipeline, const char *dir);

// # Safety
// `pipeline` must be null or an unfreed handle from this library.
void ctplan_pipeline_free(struct CtplanPipeline *pipeline);

// Plans task `task_index` of `dataset` and writes the best plan as action
// indices into `actions`. `*len` receives the plan length; when it
// exceeds `capacity` nothing is written and the call reports
// `CTPLAN_ERR_BUFFER_TOO_SMALL`.
//
// # Safety
// Handles must come from this library, `actions` must hold `capacity`
// bytes (it may be null when `capacity` is 0) and `len` be valid for
// writes.
int32_t ctplan_plan_task(const struct CtplanPipeline *pipeline,
                         const struct CtplanDataset *dataset,
                         size_t task_index,
                         int32_t method,
                         size_t top_k,
                         size_t l_max,
                         double sigma,
                         uint64_t seed,
                         uint8_t *actions,
                         size_t capacity,
                         size_t *len);

// Runs one evaluation. `pipeline` may be null for the chance method.
//
// # Safety
// Handles must be null or come from this library and `out` be valid for
// writes.
int32_t ctplan_evaluate(const struct CtplanDataset *dataset,
                        const struct CtplanPipeline *pipeline,
                        int32_t method,
                        int32_t split,
                        double sigma,
                        size_t top_k,
                        size_t l_max,
                        uint64_t seed,
                        struct CtplanReport **out);

// # Safety
// `report` must come from this library and `out` be valid for writes.
int32_t ctplan_report_metrics(const struct CtplanReport *report, struct CtplanMetrics *out);

// Writes `<stem>.txt` and `<stem>.tsv` under `dir`.
//
// # Safety
// `report` must come from this library; `dir` and `stem` must be
// nul-terminated.
int32_t ctplan_report_write(const struct CtplanReport *report, const char *dir, const char *stem);

// # Safety
// `report` must be null or an unfreed handle from this library.
void ctplan_report_free(struct CtplanReport *report);

#endif  /* CTPLAN_H */
