#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "flowrec/flow.hpp"
#include "flowrec/sampler.hpp"
#include "helpers.hpp"

using namespace flowrec;

TEST_CASE("euler with a constant field lands exactly at x0 + v") {
  // dx/dt = c integrates to x0 + c regardless of step count, with no
  // accumulation error because each step adds (1/T) c.
  const int d = 3;
  FieldFn constant = [](const double*, double, double* v, int B, int dd) {
    for (int i = 0; i < B * dd; ++i) v[i] = (i % dd) + 1.0;
  };
  for (int T : {1, 7, 10}) {
    std::vector<double> x = {1.0, 2.0, 3.0};
    euler_integrate_fn(constant, x.data(), 1, d, T);
    CHECK(x[0] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(x[1] == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(x[2] == doctest::Approx(6.0).epsilon(1e-14));
  }
}

TEST_CASE("euler with the zero field is the identity") {
  FieldFn zero = [](const double*, double, double* v, int B, int d) {
    for (int i = 0; i < B * d; ++i) v[i] = 0.0;
  };
  std::vector<double> x = {0.5, -1.5};
  euler_integrate_fn(zero, x.data(), 1, 2, 10);
  CHECK(x[0] == 0.5);
  CHECK(x[1] == -1.5);
}

TEST_CASE("euler on dx/dt = -x contracts by (1 - 1/T)^T") {
  // Explicit Euler on the linear decay field multiplies by (1 - 1/T) each
  // step, so ten steps from 1.0 give 0.9^10.
  FieldFn decay = [](const double* x, double, double* v, int B, int d) {
    for (int i = 0; i < B * d; ++i) v[i] = -x[i];
  };
  std::vector<double> x = {1.0};
  euler_integrate_fn(decay, x.data(), 1, 1, 10);
  const double expect = std::pow(0.9, 10);
  CHECK(std::fabs(x[0] - expect) <= 1e-12);
  CHECK(x[0] == doctest::Approx(0.34868).epsilon(1e-4));
}

TEST_CASE("euler passes the step start time to the field") {
  // With f(x,t) = t, the Euler sum is (1/T) * sum_{i=0}^{T-1} i/T.
  FieldFn ramp = [](const double*, double t, double* v, int B, int d) {
    for (int i = 0; i < B * d; ++i) v[i] = t;
  };
  const int T = 4;
  std::vector<double> x = {0.0};
  euler_integrate_fn(ramp, x.data(), 1, 1, T);
  double expect = 0.0;
  for (int i = 0; i < T; ++i) expect += (double)i / T / T;
  CHECK(x[0] == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("one euler step equals the single-step estimate at t=0") {
  ParamStore ps = testutil::tiny_model(6, 8, 1, 2, 4, 31);
  RngStream rng = RngStream::from_seed(32, "init");
  for (size_t i = 0; i < ps.info("fl2_w").size(); ++i)
    ps.p("fl2_w")[i] = 0.3 * rng.gaussian();

  const int d = 8, B = 2;
  std::vector<double> x0((size_t)B * d);
  for (double& v : x0) v = rng.gaussian();

  ModulationConfig mod;  // defaults: unit_mean_mult, mean 1 at inference
  std::vector<double> v((size_t)B * d);
  model_field(ps, mod, x0.data(), 0.0, v.data(), B);
  std::vector<double> expect((size_t)B * d);
  single_step_estimate(expect.data(), x0.data(), 0.0, v.data(), (int)(B * d));

  std::vector<double> x = x0;
  euler_integrate(ps, mod, x.data(), B, 1);
  for (size_t i = 0; i < x.size(); ++i)
    CHECK(x[i] == doctest::Approx(expect[i]).epsilon(1e-14));
}

TEST_CASE("model_field applies the deterministic modulation mean") {
  ParamStore ps = testutil::tiny_model(6, 4, 1, 1, 4, 33);
  RngStream rng = RngStream::from_seed(34, "init");
  for (size_t i = 0; i < ps.info("fl2_w").size(); ++i)
    ps.p("fl2_w")[i] = 0.3 * rng.gaussian();
  const int d = 4, B = 1;
  std::vector<double> x(d);
  for (double& v : x) v = rng.gaussian();

  // additive mean is delta, so the field sees x + delta elementwise.
  ModulationConfig add;
  add.mode = ModMode::additive;
  add.delta = 0.5;
  std::vector<double> shifted(d);
  for (int i = 0; i < d; ++i) shifted[i] = x[i] + 0.5;
  ModulationConfig off;
  off.mode = ModMode::off;

  std::vector<double> va(d), vb(d);
  model_field(ps, add, x.data(), 0.3, va.data(), B);
  model_field(ps, off, shifted.data(), 0.3, vb.data(), B);
  for (int i = 0; i < d; ++i) CHECK(va[i] == vb[i]);
}

TEST_CASE("euler throws a step-tagged error when the state diverges") {
  FieldFn blowup = [](const double* x, double, double* v, int B, int d) {
    for (int i = 0; i < B * d; ++i) v[i] = x[i] * 1e200;
  };
  std::vector<double> x = {1e200};
  try {
    euler_integrate_fn(blowup, x.data(), 1, 1, 10);
    FAIL("expected divergence");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("diverged at step") != std::string::npos);
  }
}

TEST_CASE("score_items is the inner product against real item rows") {
  ParamStore ps = testutil::tiny_model(3, 4, 1, 1, 4, 35);
  // Hand-set embeddings: row 0 is pad and must not be scored.
  double* emb = ps.p("item_emb");
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) emb[(size_t)r * 4 + c] = r * 10.0 + c;

  const double xhat[4] = {1.0, 0.0, 0.0, 2.0};
  std::vector<double> scores(3);
  score_items(ps, xhat, 1, scores.data());
  // item i row: (10i, 10i+1, 10i+2, 10i+3) -> score 10i + 2(10i+3)
  CHECK(scores[0] == 36.0);
  CHECK(scores[1] == 66.0);
  CHECK(scores[2] == 96.0);
}

TEST_CASE("top_k orders by score then ascending id, ids are 1-based") {
  const double scores[3] = {0.1, 0.9, 0.5};
  auto top = top_k(scores, 3, 2);
  REQUIRE(top.size() == 2);
  CHECK(top[0].first == 2);
  CHECK(top[0].second == 0.9);
  CHECK(top[1].first == 3);
  CHECK(top[1].second == 0.5);

  // Ties break toward the smaller id.
  const double tied[4] = {0.5, 0.7, 0.5, 0.7};
  auto t2 = top_k(tied, 4, 4);
  CHECK(t2[0].first == 2);
  CHECK(t2[1].first == 4);
  CHECK(t2[2].first == 1);
  CHECK(t2[3].first == 3);

  // k beyond the catalog is truncated to the catalog.
  CHECK(top_k(scores, 3, 10).size() == 3);
  CHECK_THROWS_AS(top_k(scores, 3, 0), std::invalid_argument);
}

TEST_CASE("rank_of agrees with top_k position") {
  const double scores[5] = {0.3, 0.8, 0.3, 0.9, 0.1};
  CHECK(rank_of(scores, 5, 4) == 1);
  CHECK(rank_of(scores, 5, 2) == 2);
  CHECK(rank_of(scores, 5, 1) == 3);  // tie with id 3, lower id first
  CHECK(rank_of(scores, 5, 3) == 4);
  CHECK(rank_of(scores, 5, 5) == 5);

  auto top = top_k(scores, 5, 5);
  for (size_t i = 0; i < top.size(); ++i)
    CHECK(rank_of(scores, 5, top[i].first) == (int32_t)(i + 1));
}

TEST_CASE("trajectories record T+1 states and round-trip through csv") {
  const int d = 3, T = 4;
  FieldFn constant = [](const double*, double, double* v, int B, int dd) {
    for (int i = 0; i < B * dd; ++i) v[i] = 1.0;
  };
  std::vector<double> x = {0.0, 1.0, 2.0, 5.0, 6.0, 7.0};
  std::vector<int32_t> users = {3, 9};
  std::vector<int32_t> targets = {17, 1};
  std::vector<Trajectory> trajs;
  euler_integrate_fn(constant, x.data(), 2, d, T, &trajs, users.data(),
                     targets.data());

  REQUIRE(trajs.size() == 2);
  CHECK(trajs[0].user == 3);
  CHECK(trajs[0].target == 17);
  CHECK(trajs[0].T == T);
  CHECK(trajs[0].d == d);
  REQUIRE(trajs[0].states.size() == (size_t)(T + 1) * d);
  CHECK(trajs[0].states[0] == 0.0);                   // x0
  CHECK(trajs[0].states[(size_t)T * d] ==
        doctest::Approx(1.0).epsilon(1e-14));         // x1 = 0 + 1
  CHECK(trajs[1].states[0] == 5.0);

  const std::filesystem::path dir = testutil::temp_dir("traj");
  const std::string path = (dir / "trace.csv").string();
  trace_export(trajs, path);
  auto back = trace_parse(path);
  REQUIRE(back.size() == trajs.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].user == trajs[i].user);
    CHECK(back[i].target == trajs[i].target);
    CHECK(back[i].T == trajs[i].T);
    CHECK(back[i].d == trajs[i].d);
    REQUIRE(back[i].states.size() == trajs[i].states.size());
    for (size_t j = 0; j < back[i].states.size(); ++j)
      CHECK(back[i].states[j] ==
            doctest::Approx(trajs[i].states[j]).epsilon(1e-12));
  }

  // Row count: 5 users with T=10 means 55 data rows in the file.
  std::vector<Trajectory> five;
  std::vector<double> x5(5, 0.0);
  std::vector<int32_t> u5 = {1, 2, 3, 4, 5}, t5 = {1, 1, 1, 1, 1};
  euler_integrate_fn(constant, x5.data(), 5, 1, 10, &five, u5.data(), t5.data());
  const std::string p5 = (dir / "five.csv").string();
  trace_export(five, p5);
  std::ifstream in(p5);
  std::string line;
  int rows = -1;  // skip the header
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 55);
}

TEST_CASE("empty trace exports a header-only file that parses back empty") {
  const std::filesystem::path dir = testutil::temp_dir("traj-empty");
  const std::string path = (dir / "empty.csv").string();
  trace_export({}, path);
  std::ifstream in(path);
  std::string header;
  CHECK(std::getline(in, header));
  CHECK(header.rfind("user,step", 0) == 0);
  std::string rest;
  CHECK(!std::getline(in, rest));
  CHECK(trace_parse(path).empty());
}
