#include "flowrec/model.hpp"

#include <cmath>
#include <stdexcept>

namespace flowrec {

void ParamStore::add_tensor(const std::string& name, int32_t rows, int32_t cols) {
  TensorInfo t;
  t.name = name;
  t.rows = rows;
  t.cols = cols;
  t.offset = value_.size();
  tensors_.push_back(t);
  value_.resize(value_.size() + t.size(), 0.0);
}

ParamStore ParamStore::build(const ModelConfig& cfg) {
  if (cfg.n_items <= 0) throw std::invalid_argument("ParamStore: n_items must be positive");
  if (cfg.d % cfg.heads != 0) throw std::invalid_argument("ParamStore: d must divide by heads");
  ParamStore ps;
  ps.cfg_ = cfg;
  const int32_t d = cfg.d;
  ps.add_tensor("item_emb", cfg.n_items + 1, d);
  if (cfg.gru_encoder) {
    // Gate order within the 3d block: reset, update, candidate.
    ps.add_tensor("gru_wx", d, 3 * d);
    ps.add_tensor("gru_wh", d, 3 * d);
    ps.add_tensor("gru_bx", 1, 3 * d);
    ps.add_tensor("gru_bh", 1, 3 * d);
  } else {
    ps.add_tensor("pos_emb", cfg.max_len, d);
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string p = "l" + std::to_string(l) + ".";
      ps.add_tensor(p + "ln1_g", 1, d);
      ps.add_tensor(p + "ln1_b", 1, d);
      ps.add_tensor(p + "qkv_w", d, 3 * d);
      ps.add_tensor(p + "qkv_b", 1, 3 * d);
      ps.add_tensor(p + "proj_w", d, d);
      ps.add_tensor(p + "proj_b", 1, d);
      ps.add_tensor(p + "ln2_g", 1, d);
      ps.add_tensor(p + "ln2_b", 1, d);
      ps.add_tensor(p + "ff1_w", d, 4 * d);
      ps.add_tensor(p + "ff1_b", 1, 4 * d);
      ps.add_tensor(p + "ff2_w", 4 * d, d);
      ps.add_tensor(p + "ff2_b", 1, d);
    }
    ps.add_tensor("lnf_g", 1, d);
    ps.add_tensor("lnf_b", 1, d);
  }
  if (cfg.learned_time_proj) {
    ps.add_tensor("time_w", d, d);
    ps.add_tensor("time_b", 1, d);
  }
  const int32_t fh = cfg.flow_h();
  ps.add_tensor("fl1_w", 2 * d, fh);
  ps.add_tensor("fl1_b", 1, fh);
  ps.add_tensor("fl2_w", fh, d);
  ps.add_tensor("fl2_b", 1, d);

  ps.grad_.assign(ps.value_.size(), 0.0);
  ps.m_.assign(ps.value_.size(), 0.0);
  ps.v_.assign(ps.value_.size(), 0.0);
  return ps;
}

static bool is_weight(const std::string& name) {
  // Gains, biases and the flow output layer get non-random init.
  if (name.size() >= 2 && name.compare(name.size() - 2, 2, "_b") == 0) return false;
  if (name.size() >= 2 && name.compare(name.size() - 2, 2, "_g") == 0) return false;
  if (name == "fl2_w") return false;
  return true;
}

void ParamStore::init_params(RngStream& rng) {
  constexpr double kStd = 0.02;
  for (const auto& t : tensors_) {
    double* dst = value_.data() + t.offset;
    if (is_weight(t.name)) {
      for (size_t i = 0; i < t.size(); ++i) {
        double z;
        do {
          z = rng.gaussian();
        } while (std::fabs(z) > 2.0);
        dst[i] = z * kStd;
      }
    } else if (t.name.compare(t.name.size() - 2, 2, "_g") == 0 && t.name != "fl2_w") {
      for (size_t i = 0; i < t.size(); ++i) dst[i] = 1.0;
    } else {
      // Biases and the flow output weights start at zero, so an untrained
      // field predicts v = 0 and leaves x0 untouched.
      for (size_t i = 0; i < t.size(); ++i) dst[i] = 0.0;
    }
  }
}

bool ParamStore::has(std::string_view name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return true;
  return false;
}

const TensorInfo& ParamStore::find(std::string_view name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  throw std::out_of_range("ParamStore: no tensor named " + std::string(name));
}

void ParamStore::zero_grad() { grad_.assign(grad_.size(), 0.0); }

void adam_update(double* p, const double* g, double* m, double* v, size_t n,
                 int64_t step, double lr, double beta1, double beta2, double eps) {
  const double bc1 = 1.0 - std::pow(beta1, (double)step);
  const double bc2 = 1.0 - std::pow(beta2, (double)step);
  for (size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

void ParamStore::adam_step(double lr, double beta1, double beta2, double eps) {
  ++step_;
  adam_update(value_.data(), grad_.data(), m_.data(), v_.data(), value_.size(),
              step_, lr, beta1, beta2, eps);
}

void ParamStore::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (double g : grad_) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double s = max_norm / norm;
  for (double& g : grad_) g *= s;
}

}  // namespace flowrec
