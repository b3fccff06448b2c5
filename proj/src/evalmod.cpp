#include "flowrec/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "flowrec/encoder.hpp"
#include "flowrec/kernels.hpp"

namespace flowrec {

double hr_at_k(int32_t rank, int k) { return rank >= 1 && rank <= k ? 1.0 : 0.0; }

double ndcg_at_k(int32_t rank, int k) {
  if (rank < 1 || rank > k) return 0.0;
  return 1.0 / std::log2((double)rank + 1.0);
}

namespace {

std::vector<int32_t> eval_user_list(const Split& split) {
  std::vector<int32_t> users;
  for (int32_t u = 0; u < (int32_t)split.train_items.size(); ++u)
    if (split.test_target[u] != 0) users.push_back(u);
  return users;
}

// Filters the phase batches to one shard of the eval-user order.
std::vector<int32_t> rank_shard(const ParamStore& ps,
                                const SamplerConfig& sampler,
                                const std::vector<Batch>& batches, size_t lo,
                                size_t hi, std::vector<Trajectory>* traces,
                                int trace_limit, double* solver_seconds) {
  std::vector<int32_t> ranks;
  ranks.reserve(hi - lo);
  const int d = ps.cfg().d;
  const int n = ps.cfg().n_items;
  EncoderActs acts;
  std::vector<double> xhat, scores;
  size_t seen = 0;
  for (const Batch& full : batches) {
    // Row range of this batch inside the global eval-user order.
    const size_t b_lo = seen, b_hi = seen + full.B;
    seen = b_hi;
    if (b_hi <= lo || b_lo >= hi) continue;
    const int32_t r0 = (int32_t)(std::max(lo, b_lo) - b_lo);
    const int32_t r1 = (int32_t)(std::min(hi, b_hi) - b_lo);
    Batch b;
    b.B = r1 - r0;
    b.L = full.L;
    b.ids.assign(full.ids.begin() + (size_t)r0 * full.L,
                 full.ids.begin() + (size_t)r1 * full.L);
    b.lengths.assign(full.lengths.begin() + r0, full.lengths.begin() + r1);
    b.targets.assign(full.targets.begin() + r0, full.targets.begin() + r1);
    b.users.assign(full.users.begin() + r0, full.users.begin() + r1);

    encoder_forward(b, ps, false, nullptr, acts);
    xhat = acts.x0;
    const bool want_traces =
        traces && (int)traces->size() < trace_limit;
    std::vector<Trajectory> batch_traces;
    const auto s0 = std::chrono::steady_clock::now();
    euler_integrate(ps, sampler.mod, xhat.data(), b.B, sampler.steps,
                    want_traces ? &batch_traces : nullptr, b.users.data(),
                    b.targets.data());
    if (solver_seconds)
      *solver_seconds +=
          std::chrono::duration<double>(std::chrono::steady_clock::now() - s0).count();
    if (want_traces)
      for (auto& t : batch_traces) {
        if ((int)traces->size() >= trace_limit) break;
        traces->push_back(std::move(t));
      }

    scores.resize((size_t)b.B * n);
    score_items(ps, xhat.data(), b.B, scores.data());
    if (sampler.mask_history) {
      for (int32_t r = 0; r < b.B; ++r) {
        double* row = scores.data() + (size_t)r * n;
        const int32_t* ids = b.ids.data() + (size_t)r * b.L;
        for (int32_t l = 0; l < b.L; ++l)
          if (ids[l] != 0 && ids[l] != b.targets[r])
            row[ids[l] - 1] = -std::numeric_limits<double>::infinity();
      }
    }
    for (int32_t r = 0; r < b.B; ++r)
      ranks.push_back(rank_of(scores.data() + (size_t)r * n, n, b.targets[r]));
  }
  return ranks;
}

}  // namespace

std::vector<int32_t> rank_users(const ParamStore& ps, const Snapshot& snap,
                                Phase phase, const SamplerConfig& sampler,
                                int workers, double* infer_seconds,
                                std::vector<Trajectory>* traces,
                                int trace_limit, double* solver_seconds) {
  if (workers < 1) workers = 1;
  if (ps.cfg().n_items != snap.catalog.n_items())
    throw std::runtime_error("model and snapshot disagree on catalog size");

  const auto t0 = std::chrono::steady_clock::now();
  auto batches = make_batches(snap.split, phase, 512, ps.cfg().max_len, nullptr);
  size_t total = 0;
  for (const auto& b : batches) total += b.B;

  if (solver_seconds) *solver_seconds = 0;
  // Contiguous shards; each produces its slice of the user order, so the
  // concatenation is identical for any worker count.
  std::vector<int32_t> ranks;
  ranks.reserve(total);
  for (int w = 0; w < workers; ++w) {
    const size_t lo = total * w / workers;
    const size_t hi = total * (w + 1) / workers;
    auto part = rank_shard(ps, sampler, batches, lo, hi, traces, trace_limit,
                           solver_seconds);
    ranks.insert(ranks.end(), part.begin(), part.end());
  }
  if (infer_seconds)
    *infer_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return ranks;
}

std::vector<int32_t> rank_users_popularity(const Snapshot& snap, Phase phase) {
  const int n = snap.catalog.n_items();
  std::vector<double> scores(n);
  for (int i = 1; i <= n; ++i) scores[i - 1] = (double)snap.catalog.popularity[i];
  auto batches = make_batches(snap.split, phase, 512, 1, nullptr);
  std::vector<int32_t> ranks;
  for (const auto& b : batches)
    for (int32_t r = 0; r < b.B; ++r)
      ranks.push_back(rank_of(scores.data(), n, b.targets[r]));
  return ranks;
}

EvalReport aggregate_report(const std::vector<int32_t>& ranks,
                            const Snapshot& snap, Phase phase, int steps) {
  EvalReport rep;
  rep.phase = phase == Phase::valid ? "valid" : "test";
  rep.steps = steps;

  auto users = eval_user_list(snap.split);
  if (users.size() != ranks.size())
    throw std::runtime_error("rank list does not match the eval user count");

  auto add = [](MetricRow& m, int32_t rank) {
    m.hr5 += hr_at_k(rank, 5);
    m.ndcg5 += ndcg_at_k(rank, 5);
    m.hr10 += hr_at_k(rank, 10);
    m.ndcg10 += ndcg_at_k(rank, 10);
    ++m.users;
  };
  auto finish = [](MetricRow& m) {
    if (!m.users) return;
    m.hr5 /= m.users;
    m.ndcg5 /= m.users;
    m.hr10 /= m.users;
    m.ndcg10 /= m.users;
  };

  for (size_t i = 0; i < users.size(); ++i) {
    const int32_t u = users[i];
    const int32_t rank = ranks[i];
    add(rep.overall, rank);
    if (snap.groups.head.size() > (size_t)u) {
      if (snap.groups.head[u] == 1) add(rep.head, rank);
      else if (snap.groups.head[u] == 0) add(rep.tail, rank);
      switch (snap.groups.length_bucket[u]) {
        case 0: add(rep.len_short, rank); break;
        case 1: add(rep.len_middle, rank); break;
        case 2: add(rep.len_long, rank); break;
        default: break;
      }
    }
  }
  finish(rep.overall);
  finish(rep.head);
  finish(rep.tail);
  finish(rep.len_short);
  finish(rep.len_middle);
  finish(rep.len_long);
  return rep;
}

EvalReport evaluate(const ParamStore& ps, const Snapshot& snap, Phase phase,
                    const SamplerConfig& sampler, int workers) {
  double secs = 0;
  auto ranks = rank_users(ps, snap, phase, sampler, workers, &secs);
  EvalReport rep = aggregate_report(ranks, snap, phase, sampler.steps);
  rep.infer_seconds = secs;
  rep.config_hash = snap.config_hash;
  return rep;
}

EvalReport steps_sweep(const ParamStore& ps, const Snapshot& snap, Phase phase,
                       const std::vector<int>& grid,
                       const SamplerConfig& sampler, int workers) {
  if (grid.empty()) throw std::invalid_argument("steps_sweep: empty grid");
  EvalReport rep;
  for (size_t i = 0; i < grid.size(); ++i) {
    SamplerConfig sc = sampler;
    sc.steps = grid[i];
    EvalReport one = evaluate(ps, snap, phase, sc, workers);
    if (i == 0) rep = one;
    rep.steps_sweep.push_back({grid[i], one.overall, one.infer_seconds});
  }
  return rep;
}

namespace {

double pct4(double fraction) {
  // Percentages with 4 decimal places, as serialized.
  return std::round(fraction * 100.0 * 1e4) / 1e4;
}

nlohmann::json row_json(const MetricRow& m) {
  return {{"hr@5", pct4(m.hr5)},
          {"ndcg@5", pct4(m.ndcg5)},
          {"hr@10", pct4(m.hr10)},
          {"ndcg@10", pct4(m.ndcg10)},
          {"users", m.users}};
}

}  // namespace

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["phase"] = r.phase;
  j["steps"] = r.steps;
  j["metrics_unit"] = "percent";
  j["overall"] = row_json(r.overall);
  j["groups"] = {{"head", row_json(r.head)},
                 {"tail", row_json(r.tail)},
                 {"length_short", row_json(r.len_short)},
                 {"length_middle", row_json(r.len_middle)},
                 {"length_long", row_json(r.len_long)}};
  if (!r.steps_sweep.empty()) {
    nlohmann::json sweep = nlohmann::json::array();
    for (const auto& e : r.steps_sweep) {
      nlohmann::json one = row_json(e.metrics);
      one["steps"] = e.steps;
      one["infer_seconds"] = e.infer_seconds;
      sweep.push_back(one);
    }
    j["steps_sweep"] = sweep;
  }
  j["timing"] = {{"infer_seconds", r.infer_seconds},
                 {"train_seconds_per_epoch", r.train_seconds_per_epoch}};
  j["config_hash"] = r.config_hash;
  if (!r.config_json.empty())
    j["config"] = nlohmann::json::parse(r.config_json, nullptr, false);
  return j;
}

std::string report_csv_header() {
  return "phase,steps,hr@5,ndcg@5,hr@10,ndcg@10,users,config_hash";
}

std::string report_csv_row(const EvalReport& r) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(4);
  ss << r.phase << "," << r.steps << "," << pct4(r.overall.hr5) << ","
     << pct4(r.overall.ndcg5) << "," << pct4(r.overall.hr10) << ","
     << pct4(r.overall.ndcg10) << "," << r.overall.users << ","
     << r.config_hash;
  return ss.str();
}

void write_report(const EvalReport& r, const std::string& json_path,
                  const std::string& csv_path) {
  if (!json_path.empty()) {
    std::ofstream out(json_path);
    if (!out) throw std::runtime_error("cannot open for writing: " + json_path);
    out << report_to_json(r).dump(2) << "\n";
  }
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    if (!out) throw std::runtime_error("cannot open for writing: " + csv_path);
    out << report_csv_header() << "\n";
    out << report_csv_row(r) << "\n";
    if (!r.steps_sweep.empty())
      for (const auto& e : r.steps_sweep) {
        EvalReport one;
        one.phase = r.phase;
        one.steps = e.steps;
        one.overall = e.metrics;
        one.config_hash = r.config_hash;
        out << report_csv_row(one) << "\n";
      }
  }
}

bool reports_equal_ignoring_timing(const EvalReport& a, const EvalReport& b) {
  if (a.phase != b.phase || a.steps != b.steps ||
      a.config_hash != b.config_hash)
    return false;
  if (!(a.overall == b.overall && a.head == b.head && a.tail == b.tail &&
        a.len_short == b.len_short && a.len_middle == b.len_middle &&
        a.len_long == b.len_long))
    return false;
  if (a.steps_sweep.size() != b.steps_sweep.size()) return false;
  for (size_t i = 0; i < a.steps_sweep.size(); ++i) {
    if (a.steps_sweep[i].steps != b.steps_sweep[i].steps) return false;
    if (!(a.steps_sweep[i].metrics == b.steps_sweep[i].metrics)) return false;
  }
  return true;
}

void dump_ranked_lists(const ParamStore& ps, const Snapshot& snap, Phase phase,
                       const SamplerConfig& sampler, const std::string& path,
                       int k) {
  const int n = ps.cfg().n_items;
  if (k < 1 || k > n) k = std::min(std::max(k, 1), n);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);

  auto batches = make_batches(snap.split, phase, 512, ps.cfg().max_len, nullptr);
  EncoderActs acts;
  std::vector<double> xhat, scores;
  for (const Batch& b : batches) {
    encoder_forward(b, ps, false, nullptr, acts);
    xhat = acts.x0;
    euler_integrate(ps, sampler.mod, xhat.data(), b.B, sampler.steps);
    scores.resize((size_t)b.B * n);
    score_items(ps, xhat.data(), b.B, scores.data());
    for (int32_t r = 0; r < b.B; ++r) {
      auto top = top_k(scores.data() + (size_t)r * n, n, k);
      nlohmann::json line;
      line["user"] = snap.user_names[b.users[r]];
      line["target"] = b.targets[r];
      nlohmann::json items = nlohmann::json::array();
      for (const auto& [id, score] : top) items.push_back(id);
      line["items"] = items;
      out << line.dump() << "\n";
    }
  }
}

TimingReport timing_report(const ParamStore& ps, const Snapshot& snap,
                           Phase phase, const std::vector<int>& grid,
                           int repeats, const std::vector<double>& epoch_seconds) {
  TimingReport tr;
  tr.repeats = std::max(1, repeats);
  if (!epoch_seconds.empty()) {
    double s = 0;
    for (double x : epoch_seconds) s += x;
    tr.train_seconds_per_epoch = s / epoch_seconds.size();
    tr.epochs_timed = (int)epoch_seconds.size();
  }
  for (int T : grid) {
    SamplerConfig sc;
    sc.steps = T;
    double pass_total = 0, solver_total = 0;
    for (int r = 0; r < tr.repeats; ++r) {
      double pass = 0, solver = 0;
      rank_users(ps, snap, phase, sc, 1, &pass, nullptr, 0, &solver);
      pass_total += pass;
      solver_total += solver;
    }
    tr.entries.push_back(
        {T, pass_total / tr.repeats, solver_total / tr.repeats});
  }
  return tr;
}

}  // namespace flowrec
