#pragma once

// Internal: per-backend entry points behind kern::* dispatch. Signatures match
// flowrec/kernels.hpp one to one.

#include <cstddef>
#include <cstdint>

#define FLOWREC_KERNEL_DECLS                                                   \
  void matmul(double* c, const double* a, const double* b, int m, int k,       \
              int n, bool trans_a, bool trans_b, bool accumulate);             \
  void add_bias(double* y, const double* bias, int rows, int cols);            \
  void bias_grad(double* db, const double* dy, int rows, int cols);            \
  void gelu(double* y, const double* x, size_t n);                             \
  void gelu_grad(double* dx, const double* x, const double* dy, size_t n);     \
  void layernorm(double* y, double* mean, double* rstd, const double* x,       \
                 const double* gain, const double* bias, int rows, int cols);  \
  void layernorm_grad(double* dx, double* dgain, double* dbias,                \
                      const double* dy, const double* x, const double* mean,   \
                      const double* rstd, const double* gain, int rows,        \
                      int cols);                                               \
  double softmax_xent(double* probs, double* row_loss, const double* logits,   \
                      const int32_t* targets, int rows, int cols);             \
  void softmax_xent_grad(double* dlogits, const double* probs,                 \
                         const int32_t* targets, int rows, int cols,           \
                         double scale);                                        \
  void attention(double* out, double* probs, const double* qkv,                \
                 const int32_t* lengths, int B, int L, int d, int H);          \
  void attention_grad(double* dqkv, const double* dout, const double* probs,   \
                      const double* qkv, const int32_t* lengths, int B, int L, \
                      int d, int H);                                           \
  void gather_rows(double* out, const double* table, const int32_t* ids,       \
                   int rows, int cols);                                        \
  void scatter_add_rows(double* dtable, const double* dout,                    \
                        const int32_t* ids, int rows, int cols);

namespace flowrec::kern::serial_impl {
FLOWREC_KERNEL_DECLS
}

namespace flowrec::kern::omp_impl {
FLOWREC_KERNEL_DECLS
}

#undef FLOWREC_KERNEL_DECLS
