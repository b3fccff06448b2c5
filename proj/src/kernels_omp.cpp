// OpenMP kernels. Threads only split independent outputs (matrix rows,
// attention heads, bias columns); every output element is still accumulated
// serially in the same index order as the serial reference, so results are
// bitwise identical at any thread count. scatter_add_rows stays serial on
// purpose: duplicate ids collide and a fixed add order keeps runs reproducible.

#include <algorithm>
#include <cmath>
#include <vector>

#include "flowrec/kernels.hpp"

namespace flowrec::kern::omp_impl {

void matmul(double* c, const double* a, const double* b, int m, int k, int n,
            bool trans_a, bool trans_b, bool accumulate) {
  if (!trans_a && !trans_b) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
      std::vector<double> row(n, 0.0);
      const double* ai = a + (size_t)i * k;
      for (int p = 0; p < k; ++p) {
        const double av = ai[p];
        const double* bp = b + (size_t)p * n;
        for (int j = 0; j < n; ++j) row[j] += av * bp[j];
      }
      double* ci = c + (size_t)i * n;
      if (accumulate)
        for (int j = 0; j < n; ++j) ci[j] += row[j];
      else
        for (int j = 0; j < n; ++j) ci[j] = row[j];
    }
  } else if (!trans_a && trans_b) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
      const double* ai = a + (size_t)i * k;
      double* ci = c + (size_t)i * n;
      for (int j = 0; j < n; ++j) {
        const double* bj = b + (size_t)j * k;
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
        ci[j] = accumulate ? ci[j] + acc : acc;
      }
    }
  } else if (trans_a && !trans_b) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
      std::vector<double> row(n, 0.0);
      for (int p = 0; p < k; ++p) {
        const double av = a[(size_t)p * m + i];
        const double* bp = b + (size_t)p * n;
        for (int j = 0; j < n; ++j) row[j] += av * bp[j];
      }
      double* ci = c + (size_t)i * n;
      if (accumulate)
        for (int j = 0; j < n; ++j) ci[j] += row[j];
      else
        for (int j = 0; j < n; ++j) ci[j] = row[j];
    }
  } else {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
      double* ci = c + (size_t)i * n;
      for (int j = 0; j < n; ++j) {
        const double* bj = b + (size_t)j * k;
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += a[(size_t)p * m + i] * bj[p];
        ci[j] = accumulate ? ci[j] + acc : acc;
      }
    }
  }
}

void add_bias(double* y, const double* bias, int rows, int cols) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    double* yr = y + (size_t)r * cols;
    for (int j = 0; j < cols; ++j) yr[j] += bias[j];
  }
}

void bias_grad(double* db, const double* dy, int rows, int cols) {
#pragma omp parallel for schedule(static)
  for (int j = 0; j < cols; ++j) {
    double acc = 0.0;
    for (int r = 0; r < rows; ++r) acc += dy[(size_t)r * cols + j];
    db[j] += acc;
  }
}

void gelu(double* y, const double* x, size_t n) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < (long long)n; ++i)
    y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * M_SQRT1_2));
}

void gelu_grad(double* dx, const double* x, const double* dy, size_t n) {
  constexpr double inv_sqrt_2pi = 0.3989422804014326779;
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < (long long)n; ++i) {
    double cdf = 0.5 * (1.0 + std::erf(x[i] * M_SQRT1_2));
    double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
    dx[i] += dy[i] * (cdf + x[i] * pdf);
  }
}

static constexpr double kLnEps = 1e-5;

void layernorm(double* y, double* mean, double* rstd, const double* x,
               const double* gain, const double* bias, int rows, int cols) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const double* xr = x + (size_t)r * cols;
    double mu = 0.0;
    for (int j = 0; j < cols; ++j) mu += xr[j];
    mu /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= cols;
    double rs = 1.0 / std::sqrt(var + kLnEps);
    mean[r] = mu;
    rstd[r] = rs;
    double* yr = y + (size_t)r * cols;
    for (int j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs * gain[j] + bias[j];
  }
}

void layernorm_grad(double* dx, double* dgain, double* dbias, const double* dy,
                    const double* x, const double* mean, const double* rstd,
                    const double* gain, int rows, int cols) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const double* xr = x + (size_t)r * cols;
    const double* dyr = dy + (size_t)r * cols;
    double* dxr = dx + (size_t)r * cols;
    double mu = mean[r], rs = rstd[r];
    double sum_g = 0.0, sum_gx = 0.0;
    for (int j = 0; j < cols; ++j) {
      double xhat = (xr[j] - mu) * rs;
      double g = dyr[j] * gain[j];
      sum_g += g;
      sum_gx += g * xhat;
    }
    sum_g /= cols;
    sum_gx /= cols;
    for (int j = 0; j < cols; ++j) {
      double xhat = (xr[j] - mu) * rs;
      double g = dyr[j] * gain[j];
      dxr[j] += (g - sum_g - xhat * sum_gx) * rs;
    }
  }
#pragma omp parallel for schedule(static)
  for (int j = 0; j < cols; ++j) {
    double dg = 0.0, db = 0.0;
    for (int r = 0; r < rows; ++r) {
      double xhat = (x[(size_t)r * cols + j] - mean[r]) * rstd[r];
      dg += dy[(size_t)r * cols + j] * xhat;
      db += dy[(size_t)r * cols + j];
    }
    dgain[j] += dg;
    dbias[j] += db;
  }
}

double softmax_xent(double* probs, double* row_loss, const double* logits,
                    const int32_t* targets, int rows, int cols) {
  std::vector<double> losses(rows);
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const double* lr = logits + (size_t)r * cols;
    double* pr = probs + (size_t)r * cols;
    double mx = lr[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, lr[j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) sum += std::exp(lr[j] - mx);
    double lse = mx + std::log(sum);
    for (int j = 0; j < cols; ++j) pr[j] = std::exp(lr[j] - lse);
    losses[r] = lse - lr[targets[r]];
    if (row_loss) row_loss[r] = losses[r];
  }
  // Serial reduction in row order so the mean matches the reference bitwise.
  double total = 0.0;
  for (int r = 0; r < rows; ++r) total += losses[r];
  return total / rows;
}

void softmax_xent_grad(double* dlogits, const double* probs,
                       const int32_t* targets, int rows, int cols, double scale) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const double* pr = probs + (size_t)r * cols;
    double* dr = dlogits + (size_t)r * cols;
    for (int j = 0; j < cols; ++j) dr[j] += scale * pr[j];
    dr[targets[r]] -= scale;
  }
}

void attention(double* out, double* probs, const double* qkv,
               const int32_t* lengths, int B, int L, int d, int H) {
  const int hs = d / H;
  const double scale = 1.0 / std::sqrt((double)hs);
#pragma omp parallel for schedule(static)
  for (int bh = 0; bh < B * H; ++bh) {
    const int b = bh / H;
    const int h = bh % H;
    const int start = std::max(0, L - lengths[b]);
    std::vector<double> score(L);
    for (int i = 0; i < L; ++i) {
      const double* qi = qkv + ((size_t)b * L + i) * 3 * d + h * hs;
      double mx = -1e300;
      for (int j = start; j < L; ++j) {
        const double* kj = qkv + ((size_t)b * L + j) * 3 * d + d + h * hs;
        double s = 0.0;
        for (int c = 0; c < hs; ++c) s += qi[c] * kj[c];
        s *= scale;
        score[j] = s;
        mx = std::max(mx, s);
      }
      double sum = 0.0;
      for (int j = start; j < L; ++j) sum += std::exp(score[j] - mx);
      double* prow = probs + (((size_t)b * H + h) * L + i) * L;
      for (int j = 0; j < start; ++j) prow[j] = 0.0;
      for (int j = start; j < L; ++j) prow[j] = std::exp(score[j] - mx) / sum;
      double* oi = out + ((size_t)b * L + i) * d + h * hs;
      for (int c = 0; c < hs; ++c) oi[c] = 0.0;
      for (int j = start; j < L; ++j) {
        const double* vj = qkv + ((size_t)b * L + j) * 3 * d + 2 * d + h * hs;
        for (int c = 0; c < hs; ++c) oi[c] += prow[j] * vj[c];
      }
    }
  }
}

void attention_grad(double* dqkv, const double* dout, const double* probs,
                    const double* qkv, const int32_t* lengths, int B, int L,
                    int d, int H) {
  const int hs = d / H;
  const double scale = 1.0 / std::sqrt((double)hs);
  // Each (b, h) pair touches a disjoint column slice of dqkv, so pairs are
  // safe to split across threads.
#pragma omp parallel for schedule(static)
  for (int bh = 0; bh < B * H; ++bh) {
    const int b = bh / H;
    const int h = bh % H;
    const int start = std::max(0, L - lengths[b]);
    std::vector<double> dp(L);
    for (int i = 0; i < L; ++i) {
      const double* prow = probs + (((size_t)b * H + h) * L + i) * L;
      const double* doi = dout + ((size_t)b * L + i) * d + h * hs;
      const double* qi = qkv + ((size_t)b * L + i) * 3 * d + h * hs;
      double* dqi = dqkv + ((size_t)b * L + i) * 3 * d + h * hs;
      double dot = 0.0;
      for (int j = start; j < L; ++j) {
        const double* vj = qkv + ((size_t)b * L + j) * 3 * d + 2 * d + h * hs;
        double* dvj = dqkv + ((size_t)b * L + j) * 3 * d + 2 * d + h * hs;
        double g = 0.0;
        for (int c = 0; c < hs; ++c) {
          g += doi[c] * vj[c];
          dvj[c] += prow[j] * doi[c];
        }
        dp[j] = g;
        dot += g * prow[j];
      }
      for (int j = start; j < L; ++j) {
        double ds = prow[j] * (dp[j] - dot) * scale;
        const double* kj = qkv + ((size_t)b * L + j) * 3 * d + d + h * hs;
        double* dkj = dqkv + ((size_t)b * L + j) * 3 * d + d + h * hs;
        for (int c = 0; c < hs; ++c) {
          dqi[c] += ds * kj[c];
          dkj[c] += ds * qi[c];
        }
      }
    }
  }
}

void gather_rows(double* out, const double* table, const int32_t* ids, int rows,
                 int cols) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const double* src = table + (size_t)ids[r] * cols;
    double* dst = out + (size_t)r * cols;
    for (int j = 0; j < cols; ++j) dst[j] = src[j];
  }
}

void scatter_add_rows(double* dtable, const double* dout, const int32_t* ids,
                      int rows, int cols) {
  // Serial: ids repeat (every sequence position of the same item hits one
  // row), and we want one canonical accumulation order.
  for (int r = 0; r < rows; ++r) {
    double* dst = dtable + (size_t)ids[r] * cols;
    const double* src = dout + (size_t)r * cols;
    for (int j = 0; j < cols; ++j) dst[j] += src[j];
  }
}

}  // namespace flowrec::kern::omp_impl
