#include "flowrec/kernels.hpp"

#include "kernels_impl.hpp"

namespace flowrec::kern {

namespace {
Backend g_backend = openmp_available() ? Backend::openmp : Backend::serial;
}

bool openmp_available() {
#ifdef FLOWREC_HAS_OPENMP
  return true;
#else
  return false;
#endif
}

void set_backend(Backend b) {
  if (b == Backend::openmp && !openmp_available()) b = Backend::serial;
  g_backend = b;
}

Backend backend() { return g_backend; }

#define FLOWREC_DISPATCH(fn, ...)                            \
  do {                                                       \
    if (g_backend == Backend::openmp)                        \
      omp_impl::fn(__VA_ARGS__);                             \
    else                                                     \
      serial_impl::fn(__VA_ARGS__);                          \
  } while (0)

void matmul(double* c, const double* a, const double* b, int m, int k, int n,
            bool trans_a, bool trans_b, bool accumulate) {
  FLOWREC_DISPATCH(matmul, c, a, b, m, k, n, trans_a, trans_b, accumulate);
}

void add_bias(double* y, const double* bias, int rows, int cols) {
  FLOWREC_DISPATCH(add_bias, y, bias, rows, cols);
}

void bias_grad(double* db, const double* dy, int rows, int cols) {
  FLOWREC_DISPATCH(bias_grad, db, dy, rows, cols);
}

void gelu(double* y, const double* x, size_t n) {
  FLOWREC_DISPATCH(gelu, y, x, n);
}

void gelu_grad(double* dx, const double* x, const double* dy, size_t n) {
  FLOWREC_DISPATCH(gelu_grad, dx, x, dy, n);
}

void layernorm(double* y, double* mean, double* rstd, const double* x,
               const double* gain, const double* bias, int rows, int cols) {
  FLOWREC_DISPATCH(layernorm, y, mean, rstd, x, gain, bias, rows, cols);
}

void layernorm_grad(double* dx, double* dgain, double* dbias, const double* dy,
                    const double* x, const double* mean, const double* rstd,
                    const double* gain, int rows, int cols) {
  FLOWREC_DISPATCH(layernorm_grad, dx, dgain, dbias, dy, x, mean, rstd, gain,
                   rows, cols);
}

double softmax_xent(double* probs, double* row_loss, const double* logits,
                    const int32_t* targets, int rows, int cols) {
  if (g_backend == Backend::openmp)
    return omp_impl::softmax_xent(probs, row_loss, logits, targets, rows, cols);
  return serial_impl::softmax_xent(probs, row_loss, logits, targets, rows, cols);
}

void softmax_xent_grad(double* dlogits, const double* probs,
                       const int32_t* targets, int rows, int cols,
                       double scale) {
  FLOWREC_DISPATCH(softmax_xent_grad, dlogits, probs, targets, rows, cols,
                   scale);
}

void attention(double* out, double* probs, const double* qkv,
               const int32_t* lengths, int B, int L, int d, int H) {
  FLOWREC_DISPATCH(attention, out, probs, qkv, lengths, B, L, d, H);
}

void attention_grad(double* dqkv, const double* dout, const double* probs,
                    const double* qkv, const int32_t* lengths, int B, int L,
                    int d, int H) {
  FLOWREC_DISPATCH(attention_grad, dqkv, dout, probs, qkv, lengths, B, L, d, H);
}

void gather_rows(double* out, const double* table, const int32_t* ids, int rows,
                 int cols) {
  FLOWREC_DISPATCH(gather_rows, out, table, ids, rows, cols);
}

void scatter_add_rows(double* dtable, const double* dout, const int32_t* ids,
                      int rows, int cols) {
  FLOWREC_DISPATCH(scatter_add_rows, dtable, dout, ids, rows, cols);
}

#undef FLOWREC_DISPATCH

}  // namespace flowrec::kern
