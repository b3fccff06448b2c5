#pragma once

// Inference: Euler integration of the learned field from x0, full-catalog
// inner-product scoring, deterministic top-k ranking, and trajectory export.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "flowrec/flow.hpp"
#include "flowrec/model.hpp"

namespace flowrec {

struct SamplerConfig {
  int steps = 10;             // T
  bool mask_history = false;  // drop already-seen items from the ranking
  ModulationConfig mod;       // its mean is applied deterministically
  bool operator==(const SamplerConfig&) const = default;
};

struct Trajectory {
  int32_t user = 0;
  int32_t target = 0;
  int32_t T = 0;
  int32_t d = 0;
  std::vector<double> states;  // (T+1) x d, states[0] = x0
};

// Batch field evaluation at a shared time t; used to inject analytic fields
// in tests.
using FieldFn =
    std::function<void(const double* x, double t, double* v, int B, int d)>;

// x <- Euler solution at t=1 over T uniform steps; x is B x d, updated in
// place. Throws "diverged at step i" on a non-finite state. When traj is
// non-null it receives the (T+1) states per row.
void euler_integrate_fn(const FieldFn& field, double* x, int B, int d, int T,
                        std::vector<Trajectory>* traj = nullptr,
                        const int32_t* users = nullptr,
                        const int32_t* targets = nullptr);

// The trained field with deterministic (mean) modulation.
void model_field(const ParamStore& ps, const ModulationConfig& mod,
                 const double* x, double t, double* v, int B);

void euler_integrate(const ParamStore& ps, const ModulationConfig& mod,
                     double* x, int B, int T,
                     std::vector<Trajectory>* traj = nullptr,
                     const int32_t* users = nullptr,
                     const int32_t* targets = nullptr);

// scores[b*n_items + (i-1)] = xhat[b] . e_i for real items i in 1..n_items.
void score_items(const ParamStore& ps, const double* xhat, int B,
                 double* scores);

// Descending by score, ties by ascending dense item id. Item ids are 1-based.
std::vector<std::pair<int32_t, double>> top_k(const double* scores,
                                              int n_items, int k);

// 1-based rank of `target` under the same tie rule.
int32_t rank_of(const double* scores, int n_items, int32_t target);

// CSV with header user,step,dim_0..dim_{d-1},target_id.
void trace_export(const std::vector<Trajectory>& trajs, const std::string& path);
std::vector<Trajectory> trace_parse(const std::string& path);

}  // namespace flowrec
