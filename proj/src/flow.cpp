#include "flowrec/flow.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "flowrec/kernels.hpp"

namespace flowrec {

ModMode parse_mod_mode(const std::string& s) {
  if (s == "unit_mean_mult") return ModMode::unit_mean_mult;
  if (s == "literal_mult") return ModMode::literal_mult;
  if (s == "additive") return ModMode::additive;
  if (s == "off") return ModMode::off;
  throw std::invalid_argument("unknown modulation mode: " + s);
}

std::string to_string(ModMode m) {
  switch (m) {
    case ModMode::unit_mean_mult: return "unit_mean_mult";
    case ModMode::literal_mult: return "literal_mult";
    case ModMode::additive: return "additive";
    case ModMode::off: return "off";
  }
  return "?";
}

void sample_modulation(double* lam, int d, const ModulationConfig& cfg,
                       RngStream& rng) {
  if (cfg.mode == ModMode::off) {
    for (int i = 0; i < d; ++i) lam[i] = 1.0;
    return;
  }
  if (cfg.delta <= 0.0)
    throw std::invalid_argument("modulation delta must be positive");
  const double std = std::sqrt(cfg.delta);
  const double mean = cfg.mode == ModMode::unit_mean_mult ? 1.0 : cfg.delta;
  for (int i = 0; i < d; ++i) lam[i] = mean + std * rng.gaussian();
}

void mean_modulation(double* lam, int d, const ModulationConfig& cfg) {
  double mean;
  switch (cfg.mode) {
    case ModMode::off:
    case ModMode::unit_mean_mult: mean = 1.0; break;
    case ModMode::literal_mult:
    case ModMode::additive: mean = cfg.delta; break;
  }
  for (int i = 0; i < d; ++i) lam[i] = mean;
}

void apply_modulation(double* out, const double* x, const double* lam, int d,
                      ModMode mode) {
  if (mode == ModMode::additive)
    for (int i = 0; i < d; ++i) out[i] = x[i] + lam[i];
  else
    for (int i = 0; i < d; ++i) out[i] = lam[i] * x[i];
}

void time_embed(double* out, double t, int d) {
  const double pos = t * 1000.0;
  const int half = d / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / d);
    out[2 * i] = std::sin(pos * freq);
    out[2 * i + 1] = std::cos(pos * freq);
  }
  if (d % 2) out[d - 1] = std::sin(pos * std::pow(10000.0, -(double)(d - 1) / d));
}

void interpolate(double* xt, const double* x0, const double* x1, double t,
                 int n) {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::invalid_argument("interpolate: t must lie in [0,1]");
  for (int i = 0; i < n; ++i) xt[i] = (1.0 - t) * x0[i] + t * x1[i];
}

void single_step_estimate(double* x1t, const double* xt, double t,
                          const double* v, int n) {
  for (int i = 0; i < n; ++i) x1t[i] = xt[i] + (1.0 - t) * v[i];
}

double cfm_loss(const double* v, const double* x0, const double* x1, int B,
                int d) {
  double total = 0.0;
  for (int b = 0; b < B; ++b) {
    const size_t at = (size_t)b * d;
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
      const double e = v[at + i] - (x1[at + i] - x0[at + i]);
      s += e * e;
    }
    total += s;
  }
  return total / B;
}

void field_forward(const ParamStore& ps, const double* xmod,
                   const double* temb, int B, FlowActs& acts) {
  const int d = ps.cfg().d;
  const int h = ps.cfg().flow_h();
  acts.B = B;
  acts.in.resize((size_t)B * 2 * d);
  for (int b = 0; b < B; ++b) {
    std::memcpy(acts.in.data() + (size_t)b * 2 * d, xmod + (size_t)b * d,
                (size_t)d * sizeof(double));
    std::memcpy(acts.in.data() + (size_t)b * 2 * d + d, temb + (size_t)b * d,
                (size_t)d * sizeof(double));
  }
  acts.pre1.resize((size_t)B * h);
  kern::matmul(acts.pre1.data(), acts.in.data(), ps.p("fl1_w"), B, 2 * d, h,
               false, false, false);
  kern::add_bias(acts.pre1.data(), ps.p("fl1_b"), B, h);
  acts.act1.resize((size_t)B * h);
  kern::gelu(acts.act1.data(), acts.pre1.data(), (size_t)B * h);
  acts.v.resize((size_t)B * d);
  kern::matmul(acts.v.data(), acts.act1.data(), ps.p("fl2_w"), B, h, d, false,
               false, false);
  kern::add_bias(acts.v.data(), ps.p("fl2_b"), B, d);
}

void field_backward(ParamStore& ps, FlowActs& acts, const double* dv,
                    double* dxmod, double* dtemb) {
  const int d = ps.cfg().d;
  const int h = ps.cfg().flow_h();
  const int B = acts.B;

  kern::bias_grad(ps.g("fl2_b"), dv, B, d);
  kern::matmul(ps.g("fl2_w"), acts.act1.data(), dv, h, B, d, true, false, true);
  acts.d_act1.resize((size_t)B * h);
  kern::matmul(acts.d_act1.data(), dv, ps.p("fl2_w"), B, d, h, false, true,
               false);
  acts.d_pre1.assign((size_t)B * h, 0.0);
  kern::gelu_grad(acts.d_pre1.data(), acts.pre1.data(), acts.d_act1.data(),
                  (size_t)B * h);
  kern::bias_grad(ps.g("fl1_b"), acts.d_pre1.data(), B, h);
  kern::matmul(ps.g("fl1_w"), acts.in.data(), acts.d_pre1.data(), 2 * d, B, h,
               true, false, true);
  acts.d_in.resize((size_t)B * 2 * d);
  kern::matmul(acts.d_in.data(), acts.d_pre1.data(), ps.p("fl1_w"), B, h, 2 * d,
               false, true, false);
  for (int b = 0; b < B; ++b) {
    const double* row = acts.d_in.data() + (size_t)b * 2 * d;
    if (dxmod)
      for (int i = 0; i < d; ++i) dxmod[(size_t)b * d + i] += row[i];
    if (dtemb)
      for (int i = 0; i < d; ++i) dtemb[(size_t)b * d + i] += row[d + i];
  }
}

void time_features(const ParamStore& ps, const double* t_per_row, int B,
                   std::vector<double>& temb_raw, std::vector<double>& temb) {
  const int d = ps.cfg().d;
  temb_raw.resize((size_t)B * d);
  for (int b = 0; b < B; ++b)
    time_embed(temb_raw.data() + (size_t)b * d, t_per_row[b], d);
  if (!ps.cfg().learned_time_proj) {
    temb = temb_raw;
    return;
  }
  temb.resize((size_t)B * d);
  kern::matmul(temb.data(), temb_raw.data(), ps.p("time_w"), B, d, d, false,
               false, false);
  kern::add_bias(temb.data(), ps.p("time_b"), B, d);
}

void time_features_backward(ParamStore& ps, const std::vector<double>& temb_raw,
                            int B, const double* dtemb) {
  if (!ps.cfg().learned_time_proj) return;
  const int d = ps.cfg().d;
  kern::bias_grad(ps.g("time_b"), dtemb, B, d);
  kern::matmul(ps.g("time_w"), temb_raw.data(), dtemb, d, B, d, true, false,
               true);
}

}  // namespace flowrec
