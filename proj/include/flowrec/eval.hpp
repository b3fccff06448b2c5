#pragma once

// HR@k / NDCG@k over the full catalog with head/tail and length-bucket
// breakdowns, sampling-step sweeps, timing, and report serialization.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "flowrec/dataset.hpp"
#include "flowrec/model.hpp"
#include "flowrec/sampler.hpp"

namespace flowrec {

double hr_at_k(int32_t rank, int k);    // 1 iff 1 <= rank <= k
double ndcg_at_k(int32_t rank, int k);  // 1/log2(rank+1) iff rank <= k

struct MetricRow {
  double hr5 = 0, ndcg5 = 0, hr10 = 0, ndcg10 = 0;
  int64_t users = 0;
  bool operator==(const MetricRow&) const = default;
};

struct StepsEntry {
  int steps = 0;
  MetricRow metrics;
  double infer_seconds = 0;  // excluded from report equality
};

struct EvalReport {
  std::string phase;  // "valid" or "test"
  int steps = 10;
  MetricRow overall, head, tail, len_short, len_middle, len_long;
  std::vector<StepsEntry> steps_sweep;
  double infer_seconds = 0;
  double train_seconds_per_epoch = 0;
  std::string config_hash;
  std::string config_json;  // the RunConfig that produced the run, if known
};

// Per-user 1-based target ranks in eval-user order. Users are split into
// `workers` contiguous shards; per-user results are identical regardless of
// sharding because every forward is row-local and reduction is in user order.
// infer_seconds times the whole pass; solver_seconds only the Euler phase
// (the part that scales with T).
std::vector<int32_t> rank_users(const ParamStore& ps, const Snapshot& snap,
                                Phase phase, const SamplerConfig& sampler,
                                int workers, double* infer_seconds = nullptr,
                                std::vector<Trajectory>* traces = nullptr,
                                int trace_limit = 0,
                                double* solver_seconds = nullptr);

// Ranks every user by static train popularity (the desk-scale floor model).
std::vector<int32_t> rank_users_popularity(const Snapshot& snap, Phase phase);

// Aggregates ranks into overall and per-group metrics.
EvalReport aggregate_report(const std::vector<int32_t>& ranks,
                            const Snapshot& snap, Phase phase, int steps);

EvalReport evaluate(const ParamStore& ps, const Snapshot& snap, Phase phase,
                    const SamplerConfig& sampler, int workers = 1);

// evaluate() at each T in grid with everything else fixed; sweep entries land
// in the returned report (whose headline metrics use the first grid entry).
EvalReport steps_sweep(const ParamStore& ps, const Snapshot& snap, Phase phase,
                       const std::vector<int>& grid,
                       const SamplerConfig& sampler, int workers = 1);

// Serialized metrics are percentages with 4 decimal places.
nlohmann::json report_to_json(const EvalReport& r);
std::string report_csv_header();
std::string report_csv_row(const EvalReport& r);
void write_report(const EvalReport& r, const std::string& json_path,
                  const std::string& csv_path);

// Equality that ignores wall-clock fields (used by determinism checks).
bool reports_equal_ignoring_timing(const EvalReport& a, const EvalReport& b);

// Line-JSON dump {user, target, items: top-k ids} per eval user, for offline
// analysis.
void dump_ranked_lists(const ParamStore& ps, const Snapshot& snap, Phase phase,
                       const SamplerConfig& sampler, const std::string& path,
                       int k = 100);

struct TimingEntry {
  int steps = 0;
  double pass_seconds = 0;    // full ranking pass (encode + solve + score)
  double solver_seconds = 0;  // Euler phase only; grows linearly with steps
};

struct TimingReport {
  double train_seconds_per_epoch = 0;  // mean over logged epochs
  int epochs_timed = 0;
  std::vector<TimingEntry> entries;  // means over `repeats` passes per T
  int repeats = 0;
};

TimingReport timing_report(const ParamStore& ps, const Snapshot& snap,
                           Phase phase, const std::vector<int>& grid,
                           int repeats = 3,
                           const std::vector<double>& epoch_seconds = {});

}  // namespace flowrec
