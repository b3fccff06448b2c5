#include "flowrec/encoder.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "flowrec/kernels.hpp"

namespace flowrec {

namespace {

// Dropout with inverted scaling; the mask holds 0 or 1/(1-p) and is drawn in
// element order so runs are reproducible.
void dropout_forward(double* x, std::vector<double>& mask, size_t n, double p,
                     bool train_mode, RngStream* rng) {
  if (!train_mode || p <= 0.0 || !rng) {
    mask.clear();  // empty mask = identity
    return;
  }
  mask.resize(n);
  const double keep_scale = 1.0 / (1.0 - p);
  for (size_t i = 0; i < n; ++i) {
    mask[i] = rng->uniform01() < p ? 0.0 : keep_scale;
    x[i] *= mask[i];
  }
}

void dropout_backward(double* dx, const double* dy, const std::vector<double>& mask,
                      size_t n) {
  if (mask.empty()) {
    if (dx != dy) std::memcpy(dx, dy, n * sizeof(double));
    return;
  }
  for (size_t i = 0; i < n; ++i) dx[i] = dy[i] * mask[i];
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void transformer_forward(const Batch& batch, const ParamStore& ps,
                         bool train_mode, RngStream* rng, EncoderActs& acts) {
  const ModelConfig& cfg = ps.cfg();
  const int B = batch.B, L = batch.L, d = cfg.d, H = cfg.heads;
  const int R = B * L;

  acts.emb.resize((size_t)R * d);
  kern::gather_rows(acts.emb.data(), ps.p("item_emb"), batch.ids.data(), R, d);
  const double* pos = ps.p("pos_emb");
  for (int b = 0; b < B; ++b)
    for (int l = 0; l < L; ++l) {
      double* row = acts.emb.data() + ((size_t)b * L + l) * d;
      for (int j = 0; j < d; ++j) row[j] += pos[(size_t)l * d + j];
    }
  dropout_forward(acts.emb.data(), acts.emb_mask, (size_t)R * d,
                  cfg.emb_dropout, train_mode, rng);

  acts.layers.resize(cfg.layers);
  const double* h = acts.emb.data();
  for (int l = 0; l < cfg.layers; ++l) {
    LayerActs& A = acts.layers[l];
    const std::string p = "l" + std::to_string(l) + ".";
    A.ln1_out.resize((size_t)R * d);
    A.ln1_mean.resize(R);
    A.ln1_rstd.resize(R);
    kern::layernorm(A.ln1_out.data(), A.ln1_mean.data(), A.ln1_rstd.data(), h,
                    ps.p(p + "ln1_g"), ps.p(p + "ln1_b"), R, d);

    A.qkv.resize((size_t)R * 3 * d);
    kern::matmul(A.qkv.data(), A.ln1_out.data(), ps.p(p + "qkv_w"), R, d, 3 * d,
                 false, false, false);
    kern::add_bias(A.qkv.data(), ps.p(p + "qkv_b"), R, 3 * d);

    A.attn_probs.resize((size_t)B * H * L * L);
    A.attn_out.resize((size_t)R * d);
    kern::attention(A.attn_out.data(), A.attn_probs.data(), A.qkv.data(),
                    batch.lengths.data(), B, L, d, H);

    A.proj_out.resize((size_t)R * d);
    kern::matmul(A.proj_out.data(), A.attn_out.data(), ps.p(p + "proj_w"), R, d,
                 d, false, false, false);
    kern::add_bias(A.proj_out.data(), ps.p(p + "proj_b"), R, d);
    dropout_forward(A.proj_out.data(), A.proj_mask, (size_t)R * d,
                    cfg.hidden_dropout, train_mode, rng);

    A.res1.resize((size_t)R * d);
    for (size_t i = 0; i < (size_t)R * d; ++i) A.res1[i] = h[i] + A.proj_out[i];

    A.ln2_out.resize((size_t)R * d);
    A.ln2_mean.resize(R);
    A.ln2_rstd.resize(R);
    kern::layernorm(A.ln2_out.data(), A.ln2_mean.data(), A.ln2_rstd.data(),
                    A.res1.data(), ps.p(p + "ln2_g"), ps.p(p + "ln2_b"), R, d);

    A.ff1.resize((size_t)R * 4 * d);
    kern::matmul(A.ff1.data(), A.ln2_out.data(), ps.p(p + "ff1_w"), R, d, 4 * d,
                 false, false, false);
    kern::add_bias(A.ff1.data(), ps.p(p + "ff1_b"), R, 4 * d);
    A.ff1_act.resize((size_t)R * 4 * d);
    kern::gelu(A.ff1_act.data(), A.ff1.data(), (size_t)R * 4 * d);

    A.ff2.resize((size_t)R * d);
    kern::matmul(A.ff2.data(), A.ff1_act.data(), ps.p(p + "ff2_w"), R, 4 * d, d,
                 false, false, false);
    kern::add_bias(A.ff2.data(), ps.p(p + "ff2_b"), R, d);
    dropout_forward(A.ff2.data(), A.ff2_mask, (size_t)R * d, cfg.hidden_dropout,
                    train_mode, rng);

    A.out.resize((size_t)R * d);
    for (size_t i = 0; i < (size_t)R * d; ++i) A.out[i] = A.res1[i] + A.ff2[i];
    h = A.out.data();
  }

  acts.h_last.resize((size_t)B * d);
  for (int b = 0; b < B; ++b)
    std::memcpy(acts.h_last.data() + (size_t)b * d,
                h + ((size_t)b * L + L - 1) * d, (size_t)d * sizeof(double));
  acts.lnf_out.resize((size_t)B * d);
  acts.lnf_mean.resize(B);
  acts.lnf_rstd.resize(B);
  kern::layernorm(acts.lnf_out.data(), acts.lnf_mean.data(),
                  acts.lnf_rstd.data(), acts.h_last.data(), ps.p("lnf_g"),
                  ps.p("lnf_b"), B, d);
  acts.x0 = acts.lnf_out;
}

void transformer_backward(const Batch& batch, ParamStore& ps, EncoderActs& acts,
                          const double* dx0) {
  const ModelConfig& cfg = ps.cfg();
  const int B = batch.B, L = batch.L, d = cfg.d, H = cfg.heads;
  const int R = B * L;
  const size_t Rd = (size_t)R * d;

  // Final norm back to the last-position rows.
  std::vector<double>& dh = acts.d_h;
  acts.d_a.assign((size_t)B * d, 0.0);
  kern::layernorm_grad(acts.d_a.data(), ps.g("lnf_g"), ps.g("lnf_b"), dx0,
                       acts.h_last.data(), acts.lnf_mean.data(),
                       acts.lnf_rstd.data(), ps.p("lnf_g"), B, d);
  dh.assign(Rd, 0.0);
  for (int b = 0; b < B; ++b)
    std::memcpy(dh.data() + ((size_t)b * L + L - 1) * d,
                acts.d_a.data() + (size_t)b * d, (size_t)d * sizeof(double));

  std::vector<double>& t1 = acts.d_a;
  std::vector<double>& t2 = acts.d_b;
  std::vector<double>& t4a = acts.d_c4;
  std::vector<double>& t4b = acts.d_d4;
  t1.resize(Rd);
  t2.resize(Rd);
  t4a.resize(Rd * 4);
  t4b.resize(Rd * 4);
  acts.d_qkv.resize(Rd * 3);

  for (int l = cfg.layers - 1; l >= 0; --l) {
    LayerActs& A = acts.layers[l];
    const std::string p = "l" + std::to_string(l) + ".";
    const double* h_in = l == 0 ? acts.emb.data() : acts.layers[l - 1].out.data();

    // out = res1 + dropout(ff2); dh currently holds d(out).
    dropout_backward(t1.data(), dh.data(), A.ff2_mask, Rd);
    kern::bias_grad(ps.g(p + "ff2_b"), t1.data(), R, d);
    kern::matmul(ps.g(p + "ff2_w"), A.ff1_act.data(), t1.data(), 4 * d, R, d,
                 true, false, true);
    kern::matmul(t4a.data(), t1.data(), ps.p(p + "ff2_w"), R, d, 4 * d, false,
                 true, false);
    std::fill(t4b.begin(), t4b.end(), 0.0);
    kern::gelu_grad(t4b.data(), A.ff1.data(), t4a.data(), Rd * 4);
    kern::bias_grad(ps.g(p + "ff1_b"), t4b.data(), R, 4 * d);
    kern::matmul(ps.g(p + "ff1_w"), A.ln2_out.data(), t4b.data(), d, R, 4 * d,
                 true, false, true);
    kern::matmul(t1.data(), t4b.data(), ps.p(p + "ff1_w"), R, 4 * d, d, false,
                 true, false);
    // dh += ln2 path; dh already carries the residual d(res1).
    kern::layernorm_grad(dh.data(), ps.g(p + "ln2_g"), ps.g(p + "ln2_b"),
                         t1.data(), A.res1.data(), A.ln2_mean.data(),
                         A.ln2_rstd.data(), ps.p(p + "ln2_g"), R, d);

    // res1 = h_in + dropout(proj); dh now holds d(res1).
    dropout_backward(t1.data(), dh.data(), A.proj_mask, Rd);
    kern::bias_grad(ps.g(p + "proj_b"), t1.data(), R, d);
    kern::matmul(ps.g(p + "proj_w"), A.attn_out.data(), t1.data(), d, R, d,
                 true, false, true);
    kern::matmul(t2.data(), t1.data(), ps.p(p + "proj_w"), R, d, d, false, true,
                 false);
    std::fill(acts.d_qkv.begin(), acts.d_qkv.end(), 0.0);
    kern::attention_grad(acts.d_qkv.data(), t2.data(), A.attn_probs.data(),
                         A.qkv.data(), batch.lengths.data(), B, L, d, H);
    kern::bias_grad(ps.g(p + "qkv_b"), acts.d_qkv.data(), R, 3 * d);
    kern::matmul(ps.g(p + "qkv_w"), A.ln1_out.data(), acts.d_qkv.data(), d, R,
                 3 * d, true, false, true);
    kern::matmul(t1.data(), acts.d_qkv.data(), ps.p(p + "qkv_w"), R, 3 * d, d,
                 false, true, false);
    // dh += ln1 path; the residual d(h_in) is already in dh.
    kern::layernorm_grad(dh.data(), ps.g(p + "ln1_g"), ps.g(p + "ln1_b"),
                         t1.data(), h_in, A.ln1_mean.data(), A.ln1_rstd.data(),
                         ps.p(p + "ln1_g"), R, d);
  }

  dropout_backward(dh.data(), dh.data(), acts.emb_mask, Rd);
  double* dpos = ps.g("pos_emb");
  for (int b = 0; b < B; ++b)
    for (int l = 0; l < L; ++l) {
      const double* row = dh.data() + ((size_t)b * L + l) * d;
      for (int j = 0; j < d; ++j) dpos[(size_t)l * d + j] += row[j];
    }
  kern::scatter_add_rows(ps.g("item_emb"), dh.data(), batch.ids.data(), R, d);
}

void gru_forward(const Batch& batch, const ParamStore& ps, bool train_mode,
                 RngStream* rng, EncoderActs& acts) {
  const ModelConfig& cfg = ps.cfg();
  const int B = batch.B, L = batch.L, d = cfg.d;
  const int R = B * L;

  acts.emb.resize((size_t)R * d);
  kern::gather_rows(acts.emb.data(), ps.p("item_emb"), batch.ids.data(), R, d);
  dropout_forward(acts.emb.data(), acts.emb_mask, (size_t)R * d,
                  cfg.emb_dropout, train_mode, rng);

  GruActs& G = acts.gru;
  G.r.assign((size_t)R * d, 0.0);
  G.z.assign((size_t)R * d, 0.0);
  G.n.assign((size_t)R * d, 0.0);
  G.ghn.assign((size_t)R * d, 0.0);
  G.hprev.assign((size_t)R * d, 0.0);
  acts.x0.assign((size_t)B * d, 0.0);

  const double* wx = ps.p("gru_wx");
  const double* wh = ps.p("gru_wh");
  const double* bx = ps.p("gru_bx");
  const double* bh = ps.p("gru_bh");

  std::vector<double> gx(3 * d), gh(3 * d), h(d);
  for (int b = 0; b < B; ++b) {
    const int start = std::max(0, L - batch.lengths[b]);
    std::fill(h.begin(), h.end(), 0.0);
    for (int l = start; l < L; ++l) {
      const size_t at = ((size_t)b * L + l) * d;
      const double* x = acts.emb.data() + at;
      kern::matmul(gx.data(), x, wx, 1, d, 3 * d, false, false, false);
      for (int j = 0; j < 3 * d; ++j) gx[j] += bx[j];
      kern::matmul(gh.data(), h.data(), wh, 1, d, 3 * d, false, false, false);
      for (int j = 0; j < 3 * d; ++j) gh[j] += bh[j];
      for (int j = 0; j < d; ++j) {
        const double r = sigmoid(gx[j] + gh[j]);
        const double z = sigmoid(gx[d + j] + gh[d + j]);
        const double n = std::tanh(gx[2 * d + j] + r * gh[2 * d + j]);
        G.r[at + j] = r;
        G.z[at + j] = z;
        G.n[at + j] = n;
        G.ghn[at + j] = gh[2 * d + j];
        G.hprev[at + j] = h[j];
        h[j] = (1.0 - z) * n + z * h[j];
      }
    }
    std::memcpy(acts.x0.data() + (size_t)b * d, h.data(), (size_t)d * sizeof(double));
  }
}

void gru_backward(const Batch& batch, ParamStore& ps, EncoderActs& acts,
                  const double* dx0) {
  const ModelConfig& cfg = ps.cfg();
  const int B = batch.B, L = batch.L, d = cfg.d;
  const GruActs& G = acts.gru;

  const double* wx = ps.p("gru_wx");
  const double* wh = ps.p("gru_wh");
  double* dwx = ps.g("gru_wx");
  double* dwh = ps.g("gru_wh");
  double* dbx = ps.g("gru_bx");
  double* dbh = ps.g("gru_bh");

  acts.d_h.assign((size_t)B * L * d, 0.0);  // d(emb)
  std::vector<double> dh(d), dgx(3 * d), dgh(3 * d);

  for (int b = 0; b < B; ++b) {
    const int start = std::max(0, L - batch.lengths[b]);
    std::memcpy(dh.data(), dx0 + (size_t)b * d, (size_t)d * sizeof(double));
    for (int l = L - 1; l >= start; --l) {
      const size_t at = ((size_t)b * L + l) * d;
      for (int j = 0; j < d; ++j) {
        const double r = G.r[at + j], z = G.z[at + j], n = G.n[at + j];
        const double ghn = G.ghn[at + j], hp = G.hprev[at + j];
        const double dz = dh[j] * (hp - n);
        const double dn = dh[j] * (1.0 - z);
        const double dpre_n = dn * (1.0 - n * n);
        const double dr = dpre_n * ghn;
        dgx[j] = dr * r * (1.0 - r);
        dgx[d + j] = dz * z * (1.0 - z);
        dgx[2 * d + j] = dpre_n;
        dgh[j] = dgx[j];
        dgh[d + j] = dgx[d + j];
        dgh[2 * d + j] = dpre_n * r;
        dh[j] = dh[j] * z;  // direct carry to h_{l-1}
      }
      const double* x = acts.emb.data() + at;
      // Parameter grads: outer products, accumulated row by row.
      kern::matmul(dwx, x, dgx.data(), d, 1, 3 * d, true, false, true);
      kern::matmul(dwh, G.hprev.data() + at, dgh.data(), d, 1, 3 * d, true,
                   false, true);
      for (int j = 0; j < 3 * d; ++j) {
        dbx[j] += dgx[j];
        dbh[j] += dgh[j];
      }
      kern::matmul(acts.d_h.data() + at, dgx.data(), wx, 1, 3 * d, d, false,
                   true, true);
      kern::matmul(dh.data(), dgh.data(), wh, 1, 3 * d, d, false, true, true);
    }
  }

  dropout_backward(acts.d_h.data(), acts.d_h.data(), acts.emb_mask,
                   (size_t)B * L * d);
  kern::scatter_add_rows(ps.g("item_emb"), acts.d_h.data(), batch.ids.data(),
                         B * L, d);
}

}  // namespace

void encoder_forward(const Batch& batch, const ParamStore& ps, bool train_mode,
                     RngStream* drop_rng, EncoderActs& acts) {
  acts.B = batch.B;
  acts.L = batch.L;
  if (ps.cfg().gru_encoder)
    gru_forward(batch, ps, train_mode, drop_rng, acts);
  else
    transformer_forward(batch, ps, train_mode, drop_rng, acts);
}

void encoder_backward(const Batch& batch, ParamStore& ps, EncoderActs& acts,
                      const double* dx0) {
  if (ps.cfg().gru_encoder)
    gru_backward(batch, ps, acts, dx0);
  else
    transformer_backward(batch, ps, acts, dx0);
}

double embedding_xent_forward(const double* x, const int32_t* targets, int B,
                              const ParamStore& ps, std::vector<double>& probs) {
  const int d = ps.cfg().d;
  const int n = ps.cfg().n_items;
  std::vector<double> logits((size_t)B * n);
  // Rows 1..n of the table; the pad row is not a candidate.
  kern::matmul(logits.data(), x, ps.p("item_emb") + d, B, d, n, false, true,
               false);
  for (double v : logits)
    if (!std::isfinite(v))
      throw std::runtime_error(
          "non-finite logits in softmax cross-entropy (diverged training?)");
  std::vector<int32_t> cls(B);
  for (int b = 0; b < B; ++b) {
    if (targets[b] < 1 || targets[b] > n)
      throw std::out_of_range("target item id out of range");
    cls[b] = targets[b] - 1;
  }
  probs.resize((size_t)B * n);
  return kern::softmax_xent(probs.data(), nullptr, logits.data(), cls.data(), B,
                            n);
}

void embedding_xent_backward(const double* x, const int32_t* targets, int B,
                             ParamStore& ps, const std::vector<double>& probs,
                             double weight, double* dx) {
  const int d = ps.cfg().d;
  const int n = ps.cfg().n_items;
  std::vector<int32_t> cls(B);
  for (int b = 0; b < B; ++b) cls[b] = targets[b] - 1;
  std::vector<double> dlogits((size_t)B * n, 0.0);
  kern::softmax_xent_grad(dlogits.data(), probs.data(), cls.data(), B, n,
                          weight / B);
  kern::matmul(dx, dlogits.data(), ps.p("item_emb") + d, B, n, d, false, false,
               true);
  kern::matmul(ps.g("item_emb") + d, dlogits.data(), x, n, B, d, true, false,
               true);
}

}  // namespace flowrec
