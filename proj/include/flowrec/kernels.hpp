#pragma once

#include <cstddef>
#include <cstdint>

// Dense compute kernels. Each kernel has a serial reference implementation
// and an OpenMP one; both compute every output element with the same serial
// accumulation order, so results are bit-identical across backends and
// thread counts. Parallelism is only ever applied across independent
// outputs (rows, columns, or (batch, head) pairs).

namespace flowrec::kern {

enum class Backend { serial, openmp };

void set_backend(Backend b);
Backend backend();
bool openmp_available();

// C[m,n] = op(A) * op(B), or += when accumulate is set.
//   trans_a == false: A is [m,k]   trans_a == true: A is [k,m]
//   trans_b == false: B is [k,n]   trans_b == true: B is [n,k]
void matmul(double* c, const double* a, const double* b, int m, int k, int n,
            bool trans_a, bool trans_b, bool accumulate);

// y[r, :] += bias for every row
void add_bias(double* y, const double* bias, int rows, int cols);

// db[j] += sum_r dy[r, j]
void bias_grad(double* db, const double* dy, int rows, int cols);

// exact GELU, erf form
void gelu(double* y, const double* x, size_t n);
// dx[i] += gelu'(x[i]) * dy[i]
void gelu_grad(double* dx, const double* x, const double* dy, size_t n);

// row-wise layer norm; mean/rstd are saved per row for the backward pass
void layernorm(double* y, double* mean, double* rstd, const double* x,
               const double* gain, const double* bias, int rows, int cols);
// dx[r,:] +=, dgain[:] +=, dbias[:] +=
void layernorm_grad(double* dx, double* dgain, double* dbias, const double* dy,
                    const double* x, const double* mean, const double* rstd,
                    const double* gain, int rows, int cols);

// Fused softmax + cross-entropy over `cols` classes. Returns the mean loss
// over rows; per-row probabilities are stored in `probs` for the backward
// pass and per-row losses in `row_loss` when non-null.
double softmax_xent(double* probs, double* row_loss, const double* logits,
                    const int32_t* targets, int rows, int cols);
// dlogits[r,j] += scale * (probs[r,j] - [j == targets[r]])
void softmax_xent_grad(double* dlogits, const double* probs,
                       const int32_t* targets, int rows, int cols, double scale);

// Bidirectional multi-head attention over a left-padded batch.
//   qkv:  [B, L, 3*d] packed (q | k | v), head h occupies columns [h*hs, (h+1)*hs)
//   out:  [B, L, d]
//   probs: [B, H, L, L] attention weights, saved for the backward pass
// Key positions j < L - lengths[b] are masked out for every query.
void attention(double* out, double* probs, const double* qkv,
               const int32_t* lengths, int B, int L, int d, int H);
// dqkv[b, l, :] += ; dout is [B, L, d]
void attention_grad(double* dqkv, const double* dout, const double* probs,
                    const double* qkv, const int32_t* lengths, int B, int L,
                    int d, int H);

// out[r, :] = table[ids[r], :]
void gather_rows(double* out, const double* table, const int32_t* ids, int rows,
                 int cols);
// dtable[ids[r], :] += dout[r, :]. Serial in both backends: duplicate ids
// make the scatter order-sensitive, and a fixed order keeps runs bit-equal.
void scatter_add_rows(double* dtable, const double* dout, const int32_t* ids,
                      int rows, int cols);

}  // namespace flowrec::kern
