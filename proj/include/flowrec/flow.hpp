#pragma once

// The flow model: linear interpolant, stochastic modulation, sinusoidal time
// code, the two-layer MLP vector field with manual backward, the single-step
// endpoint estimate, and the CFM regression loss.

#include <cstdint>
#include <string>
#include <vector>

#include "flowrec/model.hpp"
#include "flowrec/rng.hpp"

namespace flowrec {

enum class ModMode { unit_mean_mult, literal_mult, additive, off };

ModMode parse_mod_mode(const std::string& s);  // throws on unknown name
std::string to_string(ModMode m);

struct ModulationConfig {
  double delta = 0.001;  // variance of the Gaussian draw (std = sqrt(delta))
  ModMode mode = ModMode::unit_mean_mult;
  bool operator==(const ModulationConfig&) const = default;
};

// One lambda draw per dimension. unit_mean_mult: N(1, delta); literal_mult
// and additive: N(delta, delta). off yields the multiplicative identity.
// Throws if delta <= 0 for an active mode.
void sample_modulation(double* lam, int d, const ModulationConfig& cfg,
                       RngStream& rng);

// The distribution mean, used for deterministic inference.
void mean_modulation(double* lam, int d, const ModulationConfig& cfg);

// Multiplicative modes: out = lam * x elementwise; additive: out = x + lam.
void apply_modulation(double* out, const double* x, const double* lam, int d,
                      ModMode mode);

// Sinusoidal code of dimension d over t scaled by 1000, base 10000.
void time_embed(double* out, double t, int d);

// x_t = (1-t) x0 + t x1. Throws if t is outside [0,1].
void interpolate(double* xt, const double* x0, const double* x1, double t,
                 int n);

// x1~ = x_t + (1-t) v.
void single_step_estimate(double* x1t, const double* xt, double t,
                          const double* v, int n);

// Mean over the batch of the squared distance between v and x1-x0 (summed
// over coordinates).
double cfm_loss(const double* v, const double* x0, const double* x1, int B,
                int d);

struct FlowActs {
  int32_t B = 0;
  std::vector<double> in;    // B x 2d: (modulated state) concat (time code)
  std::vector<double> pre1;  // B x h
  std::vector<double> act1;  // B x h
  std::vector<double> v;     // B x d
  std::vector<double> d_act1, d_pre1, d_in;  // backward scratch
};

// v = W2 gelu(W1 (xmod concat temb) + b1) + b2, row-wise over the batch.
void field_forward(const ParamStore& ps, const double* xmod,
                   const double* temb, int B, FlowActs& acts);

// Accumulates parameter gradients and, when the pointers are non-null, adds
// dL/dxmod and dL/dtemb for the chain into the interpolant and a learned time
// projection.
void field_backward(ParamStore& ps, FlowActs& acts, const double* dv,
                    double* dxmod, double* dtemb);

// Per-row sinusoidal codes, passed through the learned affine when the model
// was built with learned_time_proj. temb_raw keeps the pre-projection codes
// for the backward pass.
void time_features(const ParamStore& ps, const double* t_per_row, int B,
                   std::vector<double>& temb_raw, std::vector<double>& temb);
void time_features_backward(ParamStore& ps, const std::vector<double>& temb_raw,
                            int B, const double* dtemb);

}  // namespace flowrec
