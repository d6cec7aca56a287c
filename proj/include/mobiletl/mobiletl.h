/* Copyright 2026 The mobiletl Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the mobiletl training engine and profiler. All objects are
 * opaque handles owned by the caller and released with the matching *_free.
 * Every call returns an mtl_status; on failure mtl_last_error() describes the
 * problem for the calling thread.
 */
#ifndef MOBILETL_MOBILETL_H_
#define MOBILETL_MOBILETL_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MTL_API __declspec(dllexport)
#else
#define MTL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mtl_status {
  MTL_OK = 0,
  MTL_ERR_SHAPE = 1,
  MTL_ERR_VALUE = 2,
  MTL_ERR_STATE = 3,
  MTL_ERR_SPEC = 4,
  MTL_ERR_FORMAT = 5,
  MTL_ERR_POLICY = 6,
  MTL_ERR_CONFIG = 7,
  MTL_ERR_IO = 8,
  MTL_ERR_AUDIT = 9,
  MTL_ERR_INTERNAL = 10,
  MTL_ERR_ARGUMENT = 11
} mtl_status;

typedef enum mtl_format { MTL_FORMAT_CSV = 0, MTL_FORMAT_JSON = 1, MTL_FORMAT_TABLE = 2 } mtl_format;

typedef enum mtl_optimizer { MTL_OPT_ADAM = 0, MTL_OPT_SGD = 1 } mtl_optimizer;

typedef struct mtl_spec mtl_spec;
typedef struct mtl_policy mtl_policy;
typedef struct mtl_dataset mtl_dataset;
typedef struct mtl_report mtl_report;

typedef struct mtl_train_options {
  uint64_t seed;
  int64_t epochs;
  int64_t steps; /* overrides epochs when > 0 */
  int64_t batch_size;
  double lr;
  mtl_optimizer optimizer;
  int cosine; /* non-zero: cosine annealing, else constant */
} mtl_train_options;

typedef struct mtl_summary {
  int64_t fwd_flops;
  int64_t bwd_flops;
  int64_t param_bytes;
  int64_t saved_act_bytes;
  int64_t temp_bytes;
  int64_t trainable_params;
  int passed; /* audit, gradcheck and verify-bound reports; 1 otherwise */
} mtl_summary;

MTL_API const char* mtl_version(void);
/* Message of the last failed call on this thread ("" when none). */
MTL_API const char* mtl_last_error(void);

MTL_API mtl_status mtl_spec_load(const char* path, mtl_spec** out);
MTL_API mtl_status mtl_spec_parse(const char* json, mtl_spec** out);
MTL_API mtl_status mtl_spec_param_count(const mtl_spec* spec, int64_t* out);
/* [B, C, H, W] */
MTL_API mtl_status mtl_spec_input_shape(const mtl_spec* spec, int64_t out[4]);
MTL_API void mtl_spec_free(mtl_spec* spec);

MTL_API mtl_status mtl_policy_load(const char* path, mtl_policy** out);
MTL_API mtl_status mtl_policy_parse(const char* json, mtl_policy** out);
/* name: ft_all, ft_bn, ft_bias, ft_last, ft_kblks or mobiletl_kblks. */
MTL_API mtl_status mtl_policy_preset(const char* name, int k_blocks, mtl_policy** out);
MTL_API void mtl_policy_free(mtl_policy* policy);

MTL_API mtl_status mtl_dataset_load(const char* path, mtl_dataset** out);
MTL_API mtl_status mtl_dataset_synthetic(int64_t n, int64_t classes, uint64_t seed,
                                         int64_t channels, int64_t height, int64_t width,
                                         mtl_dataset** out);
MTL_API mtl_status mtl_dataset_save(const mtl_dataset* ds, const char* path);
MTL_API mtl_status mtl_dataset_count(const mtl_dataset* ds, int64_t* out);
MTL_API void mtl_dataset_free(mtl_dataset* ds);

MTL_API mtl_status mtl_profile(const mtl_spec* spec, const mtl_policy* policy, mtl_report** out);
MTL_API mtl_status mtl_compare(const mtl_spec* spec, const mtl_policy* const* policies,
                               size_t n_policies, mtl_report** out);
/* Succeeds with passed = 0 in the summary when bytes disagree. */
MTL_API mtl_status mtl_audit(const mtl_spec* spec, const mtl_policy* policy, uint64_t seed,
                             mtl_report** out);
MTL_API void mtl_train_options_default(mtl_train_options* opts);
MTL_API mtl_status mtl_train(const mtl_spec* spec, const mtl_policy* policy,
                             const mtl_dataset* ds, const mtl_train_options* opts,
                             mtl_report** out);
MTL_API mtl_status mtl_gradcheck(uint64_t seed, mtl_report** out);
/* Lockstep exact/approximate twin run; the policy's act_backward is ignored. */
MTL_API mtl_status mtl_verify_bound(const mtl_spec* spec, const mtl_policy* policy,
                                    const mtl_dataset* ds, int64_t steps, double lr,
                                    uint64_t seed, mtl_report** out);

MTL_API mtl_status mtl_report_summary(const mtl_report* report, mtl_summary* out);
/* Copies the rendering into buf (NUL terminated) when it fits; *needed always
 * receives the required size including the terminator. buf may be NULL. */
MTL_API mtl_status mtl_report_render(const mtl_report* report, mtl_format format, char* buf,
                                     size_t cap, size_t* needed);
MTL_API mtl_status mtl_report_write(const mtl_report* report, mtl_format format,
                                    const char* path);
MTL_API void mtl_report_free(mtl_report* report);

#ifdef __cplusplus
}
#endif

#endif /* MOBILETL_MOBILETL_H_ */
