#ifndef PCIT_H
#define PCIT_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum PcitStatus {
  PCIT_STATUS_OK = 0,
  PCIT_STATUS_NULL_POINTER = 1,
  PCIT_STATUS_INVALID_UTF8 = 2,
  PCIT_STATUS_INVALID_ARGUMENT = 3,
  PCIT_STATUS_IO = 4,
  PCIT_STATUS_PARSE = 5,
  PCIT_STATUS_SCENARIO = 6,
  PCIT_STATUS_BUFFER_TOO_SMALL = 7,
  PCIT_STATUS_PANIC = 8,
  PCIT_STATUS_OTHER = 9,
} PcitStatus;

/**
 * A constructed or loaded portfolio.
 */
typedef struct PcitPortfolio PcitPortfolio;

/**
 * A loaded scenario and its target-algorithm backend.
 */
typedef struct PcitScenario PcitScenario;

/**
 * Test summary of a portfolio.
 */
typedef struct PcitSummary {
  size_t instances;
  size_t timeouts;
  size_t crashed;
  double par10;
  double par1;
  double cpu_time;
} PcitSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null.
 *
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *pcit_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pcit_version(void);

/**
 * Loads a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PcitStatus pcit_scenario_load(const char *path, struct PcitScenario **out);

/**
 * Releases a scenario. Null is ignored.
 *
 * # Safety
 * `scenario` must come from [`pcit_scenario_load`] and not be used again.
 */
void pcit_scenario_free(struct PcitScenario *scenario);

/**
 * Portfolio size `k` of the scenario, or 0 for null.
 *
 * # Safety
 * `scenario` must be null or a live handle.
 */
size_t pcit_scenario_k(const struct PcitScenario *scenario);

/**
 * Number of training instances, or 0 for null.
 *
 * # Safety
 * `scenario` must be null or a live handle.
 */
size_t pcit_scenario_train_count(const struct PcitScenario *scenario);

/**
 * Constructs a portfolio with `method` (`pcit`, `pcrs`, `global`,
 * `clustering` or `parhydra`). Budgets are in seconds; `phases` applies to
 * PCIT and `block` to PARHYDRA, other methods ignore them.
 *
 * # Safety
 * `scenario` must be a live handle, `method` a NUL-terminated string,
 * `out` a writable pointer.
 */
enum PcitStatus pcit_construct(const struct PcitScenario *scenario,
                               const char *method,
                               double t_c,
                               double t_v,
                               size_t repetitions,
                               size_t phases,
                               size_t block,
                               uint64_t seed,
                               struct PcitPortfolio **out);

/**
 * Loads a portfolio file written by the `pcit` tool or
 * [`pcit_portfolio_save`].
 *
 * # Safety
 * `scenario` must be a live handle, `path` a NUL-terminated string, `out`
 * a writable pointer.
 */
enum PcitStatus pcit_portfolio_load(const struct PcitScenario *scenario,
                                    const char *path,
                                    struct PcitPortfolio **out);

/**
 * Writes a portfolio file.
 *
 * # Safety
 * Handles must be live and `path` a NUL-terminated string.
 */
enum PcitStatus pcit_portfolio_save(const struct PcitScenario *scenario,
                                    const struct PcitPortfolio *portfolio,
                                    const char *path);

/**
 * Releases a portfolio. Null is ignored.
 *
 * # Safety
 * `portfolio` must come from this library and not be used again.
 */
void pcit_portfolio_free(struct PcitPortfolio *portfolio);

/**
 * Number of components, or 0 for null.
 *
 * # Safety
 * `portfolio` must be null or a live handle.
 */
size_t pcit_portfolio_len(const struct PcitPortfolio *portfolio);

/**
 * Solver CPU time spent constructing the portfolio, in seconds.
 *
 * # Safety
 * `portfolio` must be null or a live handle.
 */
double pcit_portfolio_cpu_time(const struct PcitPortfolio *portfolio);

/**
 * Copies component `index` as `name=value ...` text into `buf`.
 *
 * `required` receives the buffer size needed including the terminator.
 * If `buf_len` is too small nothing is copied and `BUFFER_TOO_SMALL` is
 * returned; `buf` may be null to query the size.
 *
 * # Safety
 * `portfolio` must be a live handle, `buf` null or writable for
 * `buf_len` bytes, `required` null or writable.
 */
enum PcitStatus pcit_portfolio_component(const struct PcitPortfolio *portfolio,
                                         size_t index,
                                         char *buf,
                                         size_t buf_len,
                                         size_t *required);

/**
 * Tests a portfolio on the scenario's test instances; `repetitions` must
 * be odd.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum PcitStatus pcit_test(const struct PcitScenario *scenario,
                          const struct PcitPortfolio *portfolio,
                          size_t repetitions,
                          uint64_t seed,
                          struct PcitSummary *out);

/**
 * Penalized average runtime of `n` runs: `solved[i] != 0` counts
 * `runtimes[i]`, anything else counts `penalty * cutoff`.
 *
 * # Safety
 * `runtimes` and `solved` must be readable for `n` elements, `out`
 * writable.
 */
enum PcitStatus pcit_par_score(const double *runtimes,
                               const uint8_t *solved,
                               size_t n,
                               double cutoff,
                               uint32_t penalty,
                               double *out);

/**
 * Total solver CPU time a method's construction is allowed, in the unit of
 * `t_c` and `t_v`.
 *
 * # Safety
 * `method` must be a NUL-terminated string and `out` writable.
 */
enum PcitStatus pcit_plan_total(const char *method,
                                size_t k,
                                double t_c,
                                double t_v,
                                size_t repetitions,
                                size_t phases,
                                size_t block,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PCIT_H */
