#include "flowrec/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "flowrec/kernels.hpp"

namespace flowrec {

void euler_integrate_fn(const FieldFn& field, double* x, int B, int d, int T,
                        std::vector<Trajectory>* traj, const int32_t* users,
                        const int32_t* targets) {
  if (T < 1) throw std::invalid_argument("euler_integrate: T must be >= 1");
  if (traj) {
    traj->resize(B);
    for (int b = 0; b < B; ++b) {
      Trajectory& t = (*traj)[b];
      t.user = users ? users[b] : b;
      t.target = targets ? targets[b] : 0;
      t.T = T;
      t.d = d;
      t.states.assign((size_t)(T + 1) * d, 0.0);
      std::memcpy(t.states.data(), x + (size_t)b * d, (size_t)d * sizeof(double));
    }
  }
  std::vector<double> v((size_t)B * d);
  const double h = 1.0 / T;
  for (int i = 0; i < T; ++i) {
    const double t = (double)i / T;
    field(x, t, v.data(), B, d);
    for (size_t j = 0; j < (size_t)B * d; ++j) {
      x[j] += h * v[j];
      if (!std::isfinite(x[j]))
        throw std::runtime_error("euler_integrate: diverged at step " +
                                 std::to_string(i + 1) + " of " + std::to_string(T));
    }
    if (traj)
      for (int b = 0; b < B; ++b)
        std::memcpy((*traj)[b].states.data() + (size_t)(i + 1) * d,
                    x + (size_t)b * d, (size_t)d * sizeof(double));
  }
}

void model_field(const ParamStore& ps, const ModulationConfig& mod,
                 const double* x, double t, double* v, int B) {
  const int d = ps.cfg().d;
  static thread_local FlowActs acts;
  static thread_local std::vector<double> lam, xmod, t_rows, temb_raw, temb;
  lam.resize(d);
  mean_modulation(lam.data(), d, mod);
  xmod.resize((size_t)B * d);
  for (int b = 0; b < B; ++b)
    apply_modulation(xmod.data() + (size_t)b * d, x + (size_t)b * d, lam.data(),
                     d, mod.mode);
  t_rows.assign(B, t);
  time_features(ps, t_rows.data(), B, temb_raw, temb);
  field_forward(ps, xmod.data(), temb.data(), B, acts);
  std::memcpy(v, acts.v.data(), (size_t)B * d * sizeof(double));
}

void euler_integrate(const ParamStore& ps, const ModulationConfig& mod,
                     double* x, int B, int T, std::vector<Trajectory>* traj,
                     const int32_t* users, const int32_t* targets) {
  const int d = ps.cfg().d;
  euler_integrate_fn(
      [&](const double* xs, double t, double* v, int Bb, int dd) {
        (void)dd;
        model_field(ps, mod, xs, t, v, Bb);
      },
      x, B, d, T, traj, users, targets);
}

void score_items(const ParamStore& ps, const double* xhat, int B,
                 double* scores) {
  const int d = ps.cfg().d;
  const int n = ps.cfg().n_items;
  kern::matmul(scores, xhat, ps.p("item_emb") + d, B, d, n, false, true, false);
}

std::vector<std::pair<int32_t, double>> top_k(const double* scores, int n_items,
                                              int k) {
  if (k < 1) throw std::invalid_argument("top_k: k must be >= 1");
  k = std::min(k, n_items);
  std::vector<int32_t> idx(n_items);
  for (int i = 0; i < n_items; ++i) idx[i] = i + 1;
  auto better = [&](int32_t a, int32_t b) {
    if (scores[a - 1] != scores[b - 1]) return scores[a - 1] > scores[b - 1];
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), better);
  std::vector<std::pair<int32_t, double>> out(k);
  for (int i = 0; i < k; ++i) out[i] = {idx[i], scores[idx[i] - 1]};
  return out;
}

int32_t rank_of(const double* scores, int n_items, int32_t target) {
  if (target < 1 || target > n_items)
    throw std::out_of_range("rank_of: target outside the catalog");
  const double st = scores[target - 1];
  int32_t rank = 1;
  for (int32_t i = 1; i <= n_items; ++i) {
    if (i == target) continue;
    const double s = scores[i - 1];
    if (s > st || (s == st && i < target)) ++rank;
  }
  return rank;
}

void trace_export(const std::vector<Trajectory>& trajs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  const int d = trajs.empty() ? 0 : trajs[0].d;
  out << "user,step";
  for (int j = 0; j < d; ++j) out << ",dim_" << j;
  out << ",target_id\n";
  out.precision(17);
  for (const Trajectory& t : trajs) {
    for (int s = 0; s <= t.T; ++s) {
      out << t.user << "," << s;
      for (int j = 0; j < t.d; ++j) out << "," << t.states[(size_t)s * t.d + j];
      out << "," << t.target << "\n";
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<Trajectory> trace_parse(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string header;
  if (!std::getline(in, header))
    throw std::runtime_error("empty trajectory file: " + path);
  int d = 0;
  {
    std::stringstream ss(header);
    std::string col;
    while (std::getline(ss, col, ','))
      if (col.rfind("dim_", 0) == 0) ++d;
  }
  std::vector<Trajectory> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::getline(ss, tok, ',');
    const int32_t user = (int32_t)std::stol(tok);
    std::getline(ss, tok, ',');
    const int step = std::stoi(tok);
    std::vector<double> dims(d);
    for (int j = 0; j < d; ++j) {
      std::getline(ss, tok, ',');
      dims[j] = std::stod(tok);
    }
    std::getline(ss, tok, ',');
    const int32_t target = (int32_t)std::stol(tok);
    if (step == 0) {
      Trajectory t;
      t.user = user;
      t.target = target;
      t.d = d;
      t.T = 0;
      out.push_back(std::move(t));
    }
    Trajectory& t = out.back();
    t.T = std::max(t.T, step);
    t.states.resize((size_t)(t.T + 1) * d);
    std::memcpy(t.states.data() + (size_t)step * d, dims.data(),
                (size_t)d * sizeof(double));
  }
  return out;
}

}  // namespace flowrec
