#pragma once

// Sequence encoders producing the per-user prior state x0: a bidirectional
// pre-norm Transformer (default) and a GRU (ablation). Forward passes save
// every activation needed by the manual backward pass. Also hosts the shared
// full-catalog softmax cross-entropy used by both the prior and alignment
// losses.

#include <cstdint>
#include <vector>

#include "flowrec/dataset.hpp"
#include "flowrec/model.hpp"
#include "flowrec/rng.hpp"

namespace flowrec {

struct LayerActs {
  std::vector<double> ln1_out, ln1_mean, ln1_rstd;
  std::vector<double> qkv, attn_probs, attn_out;
  std::vector<double> proj_out, proj_mask;
  std::vector<double> res1;
  std::vector<double> ln2_out, ln2_mean, ln2_rstd;
  std::vector<double> ff1, ff1_act;
  std::vector<double> ff2, ff2_mask;
  std::vector<double> out;  // res1 + dropped ff2
};

struct GruActs {
  // Per (row, step): gates and entering hidden state, flattened B*L*d.
  // The inputs themselves live in EncoderActs::emb.
  std::vector<double> r, z, n, ghn, hprev;
};

struct EncoderActs {
  int32_t B = 0, L = 0;
  std::vector<double> emb, emb_mask;   // B*L*d input after dropout + its mask
  std::vector<LayerActs> layers;
  std::vector<double> h_last;                      // B*d, pre final norm
  std::vector<double> lnf_out, lnf_mean, lnf_rstd; // final norm at last position
  GruActs gru;
  std::vector<double> x0;  // B*d

  // Gradient scratch reused across calls.
  std::vector<double> d_h, d_a, d_b, d_c4, d_d4, d_qkv;
};

// Computes x0 into acts.x0. Dropout only fires in train mode and draws from
// drop_rng in a fixed element order.
void encoder_forward(const Batch& batch, const ParamStore& ps, bool train_mode,
                     RngStream* drop_rng, EncoderActs& acts);

// Accumulates parameter gradients in ps.grads() given dL/dx0.
void encoder_backward(const Batch& batch, ParamStore& ps, EncoderActs& acts,
                      const double* dx0);

// Mean over rows of -log softmax(x . E^T)[target], softmax over the real
// items 1..n_items only (the pad row is not a candidate). probs is resized to
// B x n_items and kept for the backward pass. Throws if any logit is
// non-finite.
double embedding_xent_forward(const double* x, const int32_t* targets, int B,
                              const ParamStore& ps, std::vector<double>& probs);

// Adds weight * dL/dx into dx and weight * dL/dE into the item_emb gradient.
void embedding_xent_backward(const double* x, const int32_t* targets, int B,
                             ParamStore& ps, const std::vector<double>& probs,
                             double weight, double* dx);

// Convenience wrapper matching the loss definition for x0.
inline double prior_loss(const double* x0, const int32_t* targets, int B,
                         const ParamStore& ps, std::vector<double>& probs) {
  return embedding_xent_forward(x0, targets, B, ps, probs);
}

}  // namespace flowrec
