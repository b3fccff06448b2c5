#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "flowrec/kernels.hpp"
#include "flowrec/rng.hpp"

using namespace flowrec;

namespace {

std::vector<double> randn(size_t n, RngStream& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.gaussian();
  return v;
}

// Plain triple-loop matmul, written independently of the kernels.
std::vector<double> matmul_oracle(const std::vector<double>& a,
                                  const std::vector<double>& b, int m, int k,
                                  int n, bool ta, bool tb) {
  std::vector<double> c((size_t)m * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0;
      for (int p = 0; p < k; ++p) {
        const double av = ta ? a[(size_t)p * m + i] : a[(size_t)i * k + p];
        const double bv = tb ? b[(size_t)j * k + p] : b[(size_t)p * n + j];
        acc += av * bv;
      }
      c[(size_t)i * n + j] = acc;
    }
  return c;
}

// Runs fn under both backends and requires bitwise-identical outputs; returns
// the serial result.
template <typename Fn>
std::vector<double> both_backends(size_t out_size, Fn fn) {
  std::vector<double> s(out_size, 0.0), o(out_size, 0.0);
  kern::set_backend(kern::Backend::serial);
  fn(s.data());
  kern::set_backend(kern::Backend::openmp);
  fn(o.data());
  kern::set_backend(kern::Backend::openmp);
  REQUIRE(std::memcmp(s.data(), o.data(), out_size * sizeof(double)) == 0);
  return s;
}

}  // namespace

TEST_CASE("matmul matches the triple-loop oracle in all transpose modes") {
  RngStream rng = RngStream::from_seed(1, "init");
  const int m = 7, k = 5, n = 9;  // odd sizes to stress index edges
  auto a = randn((size_t)m * k, rng);
  auto at = randn((size_t)k * m, rng);
  auto b = randn((size_t)k * n, rng);
  auto bt = randn((size_t)n * k, rng);

  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      const auto& A = ta ? at : a;
      const auto& B = tb ? bt : b;
      auto expect = matmul_oracle(A, B, m, k, n, ta, tb);
      auto got = both_backends((size_t)m * n, [&](double* out) {
        kern::matmul(out, A.data(), B.data(), m, k, n, ta, tb, false);
      });
      for (size_t i = 0; i < expect.size(); ++i)
        CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("matmul accumulate adds onto the destination") {
  RngStream rng = RngStream::from_seed(2, "init");
  const int m = 3, k = 4, n = 2;
  auto a = randn((size_t)m * k, rng);
  auto b = randn((size_t)k * n, rng);
  auto base = randn((size_t)m * n, rng);
  auto prod = matmul_oracle(a, b, m, k, n, false, false);

  auto c = base;
  kern::set_backend(kern::Backend::serial);
  kern::matmul(c.data(), a.data(), b.data(), m, k, n, false, false, true);
  for (size_t i = 0; i < c.size(); ++i)
    CHECK(c[i] == doctest::Approx(base[i] + prod[i]).epsilon(1e-12));
}

TEST_CASE("add_bias and bias_grad") {
  RngStream rng = RngStream::from_seed(3, "init");
  const int rows = 5, cols = 6;
  auto y0 = randn((size_t)rows * cols, rng);
  auto bias = randn(cols, rng);

  auto y = both_backends((size_t)rows * cols, [&](double* out) {
    std::memcpy(out, y0.data(), y0.size() * sizeof(double));
    kern::add_bias(out, bias.data(), rows, cols);
  });
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < cols; ++j)
      CHECK(y[(size_t)r * cols + j] == y0[(size_t)r * cols + j] + bias[j]);

  auto dy = randn((size_t)rows * cols, rng);
  auto db = both_backends(cols, [&](double* out) {
    kern::bias_grad(out, dy.data(), rows, cols);
  });
  for (int j = 0; j < cols; ++j) {
    double expect = 0;
    for (int r = 0; r < rows; ++r) expect += dy[(size_t)r * cols + j];
    CHECK(db[j] == doctest::Approx(expect).epsilon(1e-13));
  }
}

TEST_CASE("gelu matches the erf closed form and known points") {
  const std::vector<double> xs = {-3.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0};
  std::vector<double> y(xs.size());
  kern::set_backend(kern::Backend::serial);
  kern::gelu(y.data(), xs.data(), xs.size());
  for (size_t i = 0; i < xs.size(); ++i) {
    const double expect =
        0.5 * xs[i] * (1.0 + std::erf(xs[i] / std::sqrt(2.0)));
    CHECK(y[i] == doctest::Approx(expect).epsilon(1e-15));
  }
  CHECK(y[3] == 0.0);  // gelu(0) = 0 exactly
}

TEST_CASE("gelu_grad matches central differences") {
  RngStream rng = RngStream::from_seed(4, "init");
  auto x = randn(64, rng);
  auto dy = randn(64, rng);
  auto dx = both_backends(64, [&](double* out) {
    kern::gelu_grad(out, x.data(), dy.data(), 64);
  });
  const double h = 1e-6;
  for (size_t i = 0; i < x.size(); ++i) {
    auto g = [&](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); };
    const double fd = (g(x[i] + h) - g(x[i] - h)) / (2 * h) * dy[i];
    CHECK(dx[i] == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("layernorm matches a per-row oracle with eps 1e-5") {
  RngStream rng = RngStream::from_seed(5, "init");
  const int rows = 4, cols = 7;
  auto x = randn((size_t)rows * cols, rng);
  auto gain = randn(cols, rng);
  auto bias = randn(cols, rng);
  std::vector<double> mean(rows), rstd(rows);

  auto y = both_backends((size_t)rows * cols, [&](double* out) {
    kern::layernorm(out, mean.data(), rstd.data(), x.data(), gain.data(),
                    bias.data(), rows, cols);
  });
  for (int r = 0; r < rows; ++r) {
    double mu = 0;
    for (int j = 0; j < cols; ++j) mu += x[(size_t)r * cols + j];
    mu /= cols;
    double var = 0;
    for (int j = 0; j < cols; ++j) {
      const double dvi = x[(size_t)r * cols + j] - mu;
      var += dvi * dvi;
    }
    var /= cols;
    const double rs = 1.0 / std::sqrt(var + 1e-5);
    CHECK(mean[r] == doctest::Approx(mu).epsilon(1e-13));
    CHECK(rstd[r] == doctest::Approx(rs).epsilon(1e-13));
    for (int j = 0; j < cols; ++j) {
      const double expect = (x[(size_t)r * cols + j] - mu) * rs * gain[j] + bias[j];
      CHECK(y[(size_t)r * cols + j] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("layernorm_grad matches finite differences of a scalar probe") {
  RngStream rng = RngStream::from_seed(6, "init");
  const int rows = 3, cols = 5;
  auto x = randn((size_t)rows * cols, rng);
  auto gain = randn(cols, rng);
  auto bias = randn(cols, rng);
  auto w = randn((size_t)rows * cols, rng);  // probe weights: L = sum w*y

  auto probe = [&](const std::vector<double>& xv, const std::vector<double>& gv,
                   const std::vector<double>& bv) {
    std::vector<double> y((size_t)rows * cols), mu(rows), rs(rows);
    kern::layernorm(y.data(), mu.data(), rs.data(), xv.data(), gv.data(),
                    bv.data(), rows, cols);
    double L = 0;
    for (size_t i = 0; i < y.size(); ++i) L += w[i] * y[i];
    return L;
  };

  std::vector<double> y((size_t)rows * cols), mu(rows), rs(rows);
  kern::set_backend(kern::Backend::serial);
  kern::layernorm(y.data(), mu.data(), rs.data(), x.data(), gain.data(),
                  bias.data(), rows, cols);
  std::vector<double> dx((size_t)rows * cols, 0.0), dg(cols, 0.0), db(cols, 0.0);
  kern::layernorm_grad(dx.data(), dg.data(), db.data(), w.data(), x.data(),
                       mu.data(), rs.data(), gain.data(), rows, cols);

  const double h = 1e-6;
  for (size_t i = 0; i < x.size(); ++i) {
    auto xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (probe(xp, gain, bias) - probe(xm, gain, bias)) / (2 * h);
    CHECK(dx[i] == doctest::Approx(fd).epsilon(1e-5));
  }
  for (int j = 0; j < cols; ++j) {
    auto gp = gain, gm = gain;
    gp[j] += h;
    gm[j] -= h;
    const double fd = (probe(x, gp, bias) - probe(x, gm, bias)) / (2 * h);
    CHECK(dg[j] == doctest::Approx(fd).epsilon(1e-5));
    auto bp = bias, bm = bias;
    bp[j] += h;
    bm[j] -= h;
    const double fd_b = (probe(x, gain, bp) - probe(x, gain, bm)) / (2 * h);
    CHECK(db[j] == doctest::Approx(fd_b).epsilon(1e-5));
  }
}

TEST_CASE("softmax_xent equals a long-double log-sum-exp oracle") {
  RngStream rng = RngStream::from_seed(7, "init");
  const int rows = 6, cols = 13;
  auto logits = randn((size_t)rows * cols, rng);
  for (double& v : logits) v *= 3;  // widen the range a little
  std::vector<int32_t> targets(rows);
  for (int r = 0; r < rows; ++r) targets[r] = (int32_t)rng.bounded(cols);

  std::vector<double> row_loss(rows);
  auto probs = both_backends((size_t)rows * cols, [&](double* out) {
    const double mean = kern::softmax_xent(out, row_loss.data(), logits.data(),
                                           targets.data(), rows, cols);
    row_loss[0] = row_loss[0];  // silence unused warnings in the lambda
    (void)mean;
  });

  double expect_mean = 0;
  for (int r = 0; r < rows; ++r) {
    long double mx = logits[(size_t)r * cols];
    for (int j = 1; j < cols; ++j)
      mx = std::max<long double>(mx, logits[(size_t)r * cols + j]);
    long double z = 0;
    for (int j = 0; j < cols; ++j)
      z += expl((long double)logits[(size_t)r * cols + j] - mx);
    const long double lse = mx + logl(z);
    const long double loss = lse - logits[(size_t)r * cols + targets[r]];
    expect_mean += (double)loss / rows;
    CHECK(row_loss[r] == doctest::Approx((double)loss).epsilon(1e-10));
    for (int j = 0; j < cols; ++j) {
      const long double p = expl((long double)logits[(size_t)r * cols + j] - lse);
      CHECK(probs[(size_t)r * cols + j] ==
            doctest::Approx((double)p).epsilon(1e-10));
    }
  }
  kern::set_backend(kern::Backend::serial);
  std::vector<double> p2((size_t)rows * cols);
  const double mean = kern::softmax_xent(p2.data(), nullptr, logits.data(),
                                         targets.data(), rows, cols);
  CHECK(mean == doctest::Approx(expect_mean).epsilon(1e-10));
}

TEST_CASE("softmax_xent_grad is scale * (p - onehot)") {
  RngStream rng = RngStream::from_seed(8, "init");
  const int rows = 4, cols = 5;
  auto logits = randn((size_t)rows * cols, rng);
  std::vector<int32_t> targets = {1, 0, 4, 2};
  std::vector<double> probs((size_t)rows * cols);
  kern::set_backend(kern::Backend::serial);
  kern::softmax_xent(probs.data(), nullptr, logits.data(), targets.data(), rows,
                     cols);

  auto dl = both_backends((size_t)rows * cols, [&](double* out) {
    kern::softmax_xent_grad(out, probs.data(), targets.data(), rows, cols, 0.5);
  });
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < cols; ++j) {
      const double expect =
          0.5 * (probs[(size_t)r * cols + j] - (j == targets[r] ? 1.0 : 0.0));
      CHECK(dl[(size_t)r * cols + j] == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("attention matches a hand-rolled masked softmax oracle") {
  RngStream rng = RngStream::from_seed(9, "init");
  const int B = 3, L = 6, d = 8, H = 2, hs = d / H;
  auto qkv = randn((size_t)B * L * 3 * d, rng);
  std::vector<int32_t> lengths = {6, 3, 1};
  std::vector<double> probs((size_t)B * H * L * L);

  auto out = both_backends((size_t)B * L * d, [&](double* o) {
    kern::attention(o, probs.data(), qkv.data(), lengths.data(), B, L, d, H);
  });

  // Explicit per-(batch, head, query) loops, masking keys before the first
  // real position.
  for (int b = 0; b < B; ++b) {
    const int start = L - lengths[b];
    for (int h = 0; h < H; ++h)
      for (int i = 0; i < L; ++i) {
        std::vector<double> scores;
        for (int j = start; j < L; ++j) {
          double s = 0;
          for (int c = 0; c < hs; ++c) {
            const double q = qkv[((size_t)b * L + i) * 3 * d + h * hs + c];
            const double k = qkv[((size_t)b * L + j) * 3 * d + d + h * hs + c];
            s += q * k;
          }
          scores.push_back(s / std::sqrt((double)hs));
        }
        double mx = scores.empty() ? 0 : scores[0];
        for (double s : scores) mx = std::max(mx, s);
        double z = 0;
        for (double s : scores) z += std::exp(s - mx);
        for (int c = 0; c < hs; ++c) {
          double acc = 0;
          for (int j = start; j < L; ++j) {
            const double p = std::exp(scores[j - start] - mx) / z;
            acc += p * qkv[((size_t)b * L + j) * 3 * d + 2 * d + h * hs + c];
          }
          CHECK(out[((size_t)b * L + i) * d + h * hs + c] ==
                doctest::Approx(acc).epsilon(1e-10));
        }
      }
  }
}

TEST_CASE("attention_grad matches finite differences of a scalar probe") {
  RngStream rng = RngStream::from_seed(10, "init");
  const int B = 2, L = 4, d = 4, H = 2;
  auto qkv = randn((size_t)B * L * 3 * d, rng);
  std::vector<int32_t> lengths = {4, 2};
  auto w = randn((size_t)B * L * d, rng);

  auto probe = [&](const std::vector<double>& q) {
    std::vector<double> out((size_t)B * L * d), probs((size_t)B * H * L * L);
    kern::attention(out.data(), probs.data(), q.data(), lengths.data(), B, L, d,
                    H);
    double Lv = 0;
    for (size_t i = 0; i < out.size(); ++i) Lv += w[i] * out[i];
    return Lv;
  };

  std::vector<double> out((size_t)B * L * d), probs((size_t)B * H * L * L);
  kern::set_backend(kern::Backend::serial);
  kern::attention(out.data(), probs.data(), qkv.data(), lengths.data(), B, L, d,
                  H);
  auto dqkv = both_backends((size_t)B * L * 3 * d, [&](double* o) {
    kern::attention_grad(o, w.data(), probs.data(), qkv.data(), lengths.data(),
                         B, L, d, H);
  });

  const double h = 1e-6;
  for (size_t i = 0; i < qkv.size(); ++i) {
    auto qp = qkv, qm = qkv;
    qp[i] += h;
    qm[i] -= h;
    const double fd = (probe(qp) - probe(qm)) / (2 * h);
    CHECK(dqkv[i] == doctest::Approx(fd).epsilon(5e-5));
  }
}

TEST_CASE("gather and scatter_add against explicit index loops") {
  RngStream rng = RngStream::from_seed(11, "init");
  const int rows = 5, cols = 3, table_rows = 4;
  auto table = randn((size_t)table_rows * cols, rng);
  std::vector<int32_t> ids = {2, 0, 3, 2, 1};  // duplicate id on purpose

  auto out = both_backends((size_t)rows * cols, [&](double* o) {
    kern::gather_rows(o, table.data(), ids.data(), rows, cols);
  });
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      CHECK(out[(size_t)r * cols + c] == table[(size_t)ids[r] * cols + c]);

  auto dout = randn((size_t)rows * cols, rng);
  auto dtab = both_backends((size_t)table_rows * cols, [&](double* o) {
    kern::scatter_add_rows(o, dout.data(), ids.data(), rows, cols);
  });
  std::vector<double> expect((size_t)table_rows * cols, 0.0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      expect[(size_t)ids[r] * cols + c] += dout[(size_t)r * cols + c];
  for (size_t i = 0; i < expect.size(); ++i)
    CHECK(dtab[i] == doctest::Approx(expect[i]).epsilon(1e-14));
}

TEST_CASE("backend selection reports and falls back sanely") {
  kern::set_backend(kern::Backend::serial);
  CHECK(kern::backend() == kern::Backend::serial);
  kern::set_backend(kern::Backend::openmp);
  if (kern::openmp_available()) CHECK(kern::backend() == kern::Backend::openmp);
  else CHECK(kern::backend() == kern::Backend::serial);
}

TEST_CASE("backends stay bitwise equal on larger shapes") {
  RngStream rng = RngStream::from_seed(12, "init");
  const int m = 33, k = 17, n = 29;
  auto a = randn((size_t)m * k, rng);
  auto b = randn((size_t)k * n, rng);
  both_backends((size_t)m * n, [&](double* out) {
    kern::matmul(out, a.data(), b.data(), m, k, n, false, false, false);
  });

  const int B = 4, L = 11, d = 12, H = 3;
  auto qkv = randn((size_t)B * L * 3 * d, rng);
  std::vector<int32_t> lengths = {11, 7, 1, 4};
  std::vector<double> probs((size_t)B * H * L * L);
  both_backends((size_t)B * L * d, [&](double* o) {
    kern::attention(o, probs.data(), qkv.data(), lengths.data(), B, L, d, H);
  });

  const int rows = 37, cols = 101;
  auto logits = randn((size_t)rows * cols, rng);
  std::vector<int32_t> targets(rows);
  for (int r = 0; r < rows; ++r) targets[r] = (int32_t)rng.bounded(cols);
  std::vector<double> row_loss(rows);
  both_backends((size_t)rows * cols, [&](double* out) {
    kern::softmax_xent(out, row_loss.data(), logits.data(), targets.data(),
                       rows, cols);
  });
}
