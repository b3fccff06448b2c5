// Times each compute kernel under the serial and OpenMP backends on
// inference-sized problems and verifies the outputs agree bitwise.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "flowrec/kernels.hpp"
#include "flowrec/rng.hpp"

using namespace flowrec;

namespace {

double now() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::vector<double> randn(size_t n, RngStream& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.gaussian();
  return v;
}

struct Case {
  std::string name;
  // Runs the kernel once into `out`; called repeatedly per backend.
  std::function<void(std::vector<double>& out)> run;
  size_t out_size = 0;
};

void report(const Case& c, int reps) {
  std::vector<double> serial_out(c.out_size), omp_out(c.out_size);

  kern::set_backend(kern::Backend::serial);
  c.run(serial_out);  // warm-up + reference output
  double t0 = now();
  for (int r = 0; r < reps; ++r) c.run(serial_out);
  const double serial_s = (now() - t0) / reps;

  kern::set_backend(kern::Backend::openmp);
  c.run(omp_out);
  t0 = now();
  for (int r = 0; r < reps; ++r) c.run(omp_out);
  const double omp_s = (now() - t0) / reps;

  const bool equal = std::memcmp(serial_out.data(), omp_out.data(),
                                 c.out_size * sizeof(double)) == 0;
  std::printf("%-22s %10.3f ms %10.3f ms %7.2fx   %s\n", c.name.c_str(),
              serial_s * 1e3, omp_s * 1e3, serial_s / omp_s,
              equal ? "bitwise equal" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::atoi(argv[1]) : 5;
  RngStream rng = RngStream::from_seed(7, "bench");

  const int m = 256, k = 256, n = 256;
  auto a = randn((size_t)m * k, rng), b = randn((size_t)k * n, rng);

  const int B = 64, L = 50, d = 128, H = 4;
  auto qkv = randn((size_t)B * L * 3 * d, rng);
  std::vector<int32_t> lengths(B);
  for (int i = 0; i < B; ++i) lengths[i] = 1 + (int)(rng.bounded(L));
  std::vector<double> probs((size_t)B * H * L * L);

  const int rows = 512, cols = 4096;
  auto x = randn((size_t)rows * cols, rng);
  auto gain = randn(cols, rng), bias = randn(cols, rng);
  std::vector<double> mean(rows), rstd(rows), row_loss(rows);
  std::vector<int32_t> targets(rows);
  for (int i = 0; i < rows; ++i) targets[i] = (int32_t)rng.bounded(cols);

  std::vector<Case> cases;
  cases.push_back({"matmul 256^3",
                   [&](std::vector<double>& out) {
                     kern::matmul(out.data(), a.data(), b.data(), m, k, n,
                                  false, false, false);
                   },
                   (size_t)m * n});
  cases.push_back({"matmul 256^3 t_b",
                   [&](std::vector<double>& out) {
                     kern::matmul(out.data(), a.data(), b.data(), m, k, n,
                                  false, true, false);
                   },
                   (size_t)m * n});
  cases.push_back({"attention 64x50x128x4",
                   [&](std::vector<double>& out) {
                     kern::attention(out.data(), probs.data(), qkv.data(),
                                     lengths.data(), B, L, d, H);
                   },
                   (size_t)B * L * d});
  cases.push_back({"layernorm 512x4096",
                   [&](std::vector<double>& out) {
                     kern::layernorm(out.data(), mean.data(), rstd.data(),
                                     x.data(), gain.data(), bias.data(), rows,
                                     cols);
                   },
                   (size_t)rows * cols});
  cases.push_back({"softmax_xent 512x4096",
                   [&](std::vector<double>& out) {
                     kern::softmax_xent(out.data(), row_loss.data(), x.data(),
                                        targets.data(), rows, cols);
                   },
                   (size_t)rows * cols});
  cases.push_back({"gelu 512x4096",
                   [&](std::vector<double>& out) {
                     kern::gelu(out.data(), x.data(), (size_t)rows * cols);
                   },
                   (size_t)rows * cols});

  std::printf("openmp available: %s, reps per case: %d\n",
              kern::openmp_available() ? "yes" : "no", reps);
  std::printf("%-22s %13s %13s %8s\n", "kernel", "serial", "openmp", "speedup");
  for (const Case& c : cases) report(c, reps);
  return 0;
}
