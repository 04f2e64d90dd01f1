#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "vqa/model.hpp"

using vqa::AffineModelParams;
using vqa::forward;
using vqa::forward_backward;
using vqa::Index;
using vqa::init_params;
using vqa::MatrixX;
using vqa::PoolingConfig;
using vqa::QualityModelParams;
using vqa::recur;
using vqa::reduce;
using vqa::score_frames;
using vqa::VectorX;

namespace {

using Md = MatrixX<double>;
using Vd = VectorX<double>;

Md random_matrix(std::uint64_t seed, Index rows, Index cols, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Md m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

// Independent scalar reference for the GRU scan: plain loops, explicit index
// arithmetic, nothing shared with the library implementation.
Md gru_reference(const Md& x, const QualityModelParams<double>& p) {
  const Index steps = x.rows(), h_dim = p.hidden_dim(), r_dim = p.reduced_dim();
  std::vector<double> h(h_dim);
  for (Index i = 0; i < h_dim; ++i) h[i] = p.initial_state[i];
  Md out(steps, h_dim);
  auto sigmoid = [](double a) { return 1.0 / (1.0 + std::exp(-a)); };
  for (Index t = 0; t < steps; ++t) {
    std::vector<double> z(h_dim), r(h_dim), c(h_dim), hn(h_dim);
    for (Index i = 0; i < h_dim; ++i) {
      double az = p.gru.b_update[i], ar = p.gru.b_reset[i];
      for (Index j = 0; j < r_dim; ++j) {
        az += p.gru.w_update(i, j) * x(t, j);
        ar += p.gru.w_reset(i, j) * x(t, j);
      }
      for (Index j = 0; j < h_dim; ++j) {
        az += p.gru.u_update(i, j) * h[j];
        ar += p.gru.u_reset(i, j) * h[j];
      }
      z[i] = sigmoid(az);
      r[i] = sigmoid(ar);
    }
    for (Index i = 0; i < h_dim; ++i) {
      double acand = p.gru.b_cand[i];
      for (Index j = 0; j < r_dim; ++j) acand += p.gru.w_cand(i, j) * x(t, j);
      for (Index j = 0; j < h_dim; ++j) acand += p.gru.u_cand(i, j) * (r[j] * h[j]);
      c[i] = std::tanh(acand);
      hn[i] = z[i] * h[i] + (1.0 - z[i]) * c[i];
    }
    h = hn;
    for (Index i = 0; i < h_dim; ++i) out(t, i) = h[i];
  }
  return out;
}

}  // namespace

TEST_CASE("reduce: affine map of feature rows") {
  QualityModelParams<double> p = QualityModelParams<double>::zeros(4, 2, 3);

  SUBCASE("selector weights pick coordinates") {
    p.reduce_w(0, 1) = 1.0;  // row 0 selects feature 1
    p.reduce_w(1, 3) = 1.0;  // row 1 selects feature 3
    Md f(2, 4);
    f << 1, 2, 3, 4, 5, 6, 7, 8;
    const Md x = reduce(f, p);
    CHECK_EQ(x(0, 0), 2.0);
    CHECK_EQ(x(0, 1), 4.0);
    CHECK_EQ(x(1, 0), 6.0);
    CHECK_EQ(x(1, 1), 8.0);
  }
  SUBCASE("all-ones row sums the features") {
    p.reduce_w.row(0).setOnes();
    Md f(1, 4);
    f << 1, 2, 3, 4;
    CHECK_EQ(reduce(f, p)(0, 0), 10.0);
  }
  SUBCASE("zero weights leave only the bias") {
    p.reduce_b << -1.5, 2.5;
    Md f = random_matrix(5, 3, 4, -2.0, 2.0);
    const Md x = reduce(f, p);
    for (Index t = 0; t < 3; ++t) {
      CHECK_EQ(x(t, 0), -1.5);
      CHECK_EQ(x(t, 1), 2.5);
    }
  }
  SUBCASE("dimension mismatch is a shape error") {
    Md f(2, 5);
    f.setZero();
    CHECK_THROWS_AS(reduce(f, p), vqa::ShapeError);
  }
  SUBCASE("empty sequence is a domain error") {
    Md f(0, 4);
    CHECK_THROWS_AS(reduce(f, p), vqa::DomainError);
  }
}

TEST_CASE("recur: zero parameters keep a zero state") {
  QualityModelParams<double> p = QualityModelParams<double>::zeros(3, 3, 4);
  const Md x = Md::Zero(10, 3);
  const Md h = recur(x, p);
  REQUIRE_EQ(h.rows(), 10);
  for (Index t = 0; t < 10; ++t)
    for (Index i = 0; i < 4; ++i) CHECK_EQ(h(t, i), 0.0);  // exact
}

TEST_CASE("recur: single step matches the gate formulas") {
  // One step from h0 = 0: h_1 = (1 - z) * tanh(Wc x + bc), z = sigmoid(Wz x + bz).
  QualityModelParams<double> p = QualityModelParams<double>::zeros(1, 1, 1);
  p.gru.w_update(0, 0) = 0.7;
  p.gru.b_update[0] = -0.2;
  p.gru.w_cand(0, 0) = 1.3;
  p.gru.b_cand[0] = 0.4;
  p.gru.w_reset(0, 0) = 5.0;  // irrelevant from a zero state
  Md x(1, 1);
  x << 0.9;
  const double z = 1.0 / (1.0 + std::exp(-(0.7 * 0.9 - 0.2)));
  const double c = std::tanh(1.3 * 0.9 + 0.4);
  const double expected = (1.0 - z) * c;
  CHECK_EQ(recur(x, p)(0, 0), doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("recur: matches an independent scalar implementation") {
  const Index steps = 5, d = 6, r = 4, h = 3;
  QualityModelParams<double> p = init_params<double>(d, r, h, 99);
  p.initial_state.setZero();
  const Md x = random_matrix(17, steps, r, -1.5, 1.5);
  const Md got = recur(x, p);
  const Md want = gru_reference(x, p);
  for (Index t = 0; t < steps; ++t)
    for (Index i = 0; i < h; ++i)
      CHECK_EQ(got(t, i), doctest::Approx(want(t, i)).epsilon(1e-12));
}

TEST_CASE("recur: hidden state stays in (-1, 1) from a zero start") {
  // h is a convex blend of the previous state and a tanh output.
  QualityModelParams<double> p = init_params<double>(4, 4, 6, 3);
  const Md x = random_matrix(11, 40, 4, -3.0, 3.0);
  const Md h = recur(reduce(random_matrix(12, 40, 4, -3.0, 3.0), p), p);
  CHECK(h.maxCoeff() < 1.0);
  CHECK(h.minCoeff() > -1.0);
}

TEST_CASE("score_frames: affine head") {
  QualityModelParams<double> p = QualityModelParams<double>::zeros(2, 2, 3);
  SUBCASE("zero head returns the bias") {
    p.head_b = 4.5;
    const Md h = random_matrix(21, 6, 3, -1.0, 1.0);
    const Vd q = score_frames(h, p);
    for (Index t = 0; t < 6; ++t) CHECK_EQ(q[t], 4.5);
  }
  SUBCASE("selector head picks one hidden unit") {
    p.head_w[2] = 2.0;
    Md h(1, 3);
    h << 0.1, 0.2, 0.3;
    CHECK_EQ(score_frames(h, p)[0], doctest::Approx(0.6).epsilon(1e-15));
  }
  SUBCASE("hidden dim mismatch is a shape error") {
    const Md h = Md::Zero(2, 4);
    CHECK_THROWS_AS(score_frames(h, p), vqa::ShapeError);
  }
}

TEST_CASE("forward: zero model collapses to the head bias") {
  // All-zero weights: gates sit at 1/2, candidate at 0, so the state never
  // leaves zero and every frame scores exactly head_b.
  QualityModelParams<double> p = QualityModelParams<double>::zeros(6, 5, 4);
  p.head_b = 0.37;
  PoolingConfig<double> cfg;
  const Md f = random_matrix(31, 25, 6, -10.0, 10.0);
  const auto out = forward(f, p, cfg);
  CHECK_EQ(out.quality, 0.37);  // exact
  for (Index t = 0; t < 25; ++t) CHECK_EQ(out.frame_scores[t], 0.37);
}

TEST_CASE("forward: deterministic, bit-identical on repeat") {
  QualityModelParams<double> p = init_params<double>(8, 6, 5, 7);
  PoolingConfig<double> cfg;
  cfg.tau = 3;
  const Md f = random_matrix(41, 20, 8, -1.0, 1.0);
  const auto a = forward(f, p, cfg);
  const auto b = forward(f, p, cfg);
  CHECK_EQ(a.quality, b.quality);
  for (Index t = 0; t < 20; ++t) CHECK_EQ(a.frame_scores[t], b.frame_scores[t]);
}

TEST_CASE("forward: non-finite parameters surface a numeric error with frame index") {
  QualityModelParams<double> p = QualityModelParams<double>::zeros(3, 2, 2);
  p.reduce_w.setConstant(1e308);
  const Md f = Md::Constant(4, 3, 1e5);
  PoolingConfig<double> cfg;
  try {
    forward(f, p, cfg);
    FAIL("expected NumericError");
  } catch (const vqa::NumericError& e) {
    CHECK(std::string(e.what()).find("frame 0") != std::string::npos);
  }
}

TEST_CASE("forward_backward: finite differences over every trainable parameter") {
  const Index steps = 20, d = 8, r = 6, h = 5;
  const QualityModelParams<double> p = init_params<double>(d, r, h, 12345);
  const Md f = random_matrix(77, steps, d, -1.0, 1.0);

  struct Case {
    PoolingConfig<double> cfg;
    double upstream;
  };
  Case cases[3];
  cases[0].cfg.tau = 3;
  cases[0].cfg.gamma = 0.5;
  cases[0].upstream = 1.0;
  cases[1].cfg.tau = 12;
  cases[1].cfg.gamma = 0.3;
  cases[1].upstream = -0.7;
  cases[2].cfg.tau = 4;
  cases[2].cfg.gamma = 0.6;
  cases[2].cfg.memory = vqa::MemoryMode::kAverage;
  cases[2].upstream = 1.0;

  for (const auto& c : cases) {
    CAPTURE(c.cfg.tau);
    // Guard: window minima must be well separated or the min subgradient is
    // not comparable against finite differences.
    {
      const auto base = forward(f, p, c.cfg);
      std::vector<double> q(base.frame_scores.data(),
                            base.frame_scores.data() + steps);
      for (Index t = 1; t < steps; ++t) {
        const Index lo = std::max<Index>(0, t - c.cfg.tau);
        double best = 1e99, second = 1e99;
        for (Index j = lo; j < t; ++j) {
          if (q[j] < best) {
            second = best;
            best = q[j];
          } else if (q[j] < second) {
            second = q[j];
          }
        }
        if (second < 1e98) REQUIRE(second - best > 1e-4);
      }
    }

    const auto bp = forward_backward(f, p, c.cfg, c.upstream);
    CHECK_EQ(bp.forward.quality, forward(f, p, c.cfg).quality);

    const Vd analytic = vqa::flatten(bp.grads);
    Vd theta = vqa::flatten(p);
    const double eps = 1e-4;
    for (Index k = 0; k < theta.size(); ++k) {
      QualityModelParams<double> pp = p, pm = p;
      Vd tp = theta, tm = theta;
      tp[k] += eps;
      tm[k] -= eps;
      vqa::unflatten_into(tp, pp);
      vqa::unflatten_into(tm, pm);
      const double fd = c.upstream *
                        (forward(f, pp, c.cfg).quality - forward(f, pm, c.cfg).quality) /
                        (2 * eps);
      const double tol = 1e-3 * std::max({std::abs(fd), std::abs(analytic[k]), 1e-6});
      CHECK_MESSAGE(std::abs(analytic[k] - fd) <= tol,
                    "param ", k, ": analytic ", analytic[k], " vs fd ", fd);
    }

    // The initial-state gradient is reported too, even though it is fixed.
    for (Index i = 0; i < h; ++i) {
      QualityModelParams<double> pp = p, pm = p;
      pp.initial_state[i] += eps;
      pm.initial_state[i] -= eps;
      const double fd = c.upstream *
                        (forward(f, pp, c.cfg).quality - forward(f, pm, c.cfg).quality) /
                        (2 * eps);
      const double tol =
          1e-3 * std::max({std::abs(fd), std::abs(bp.grads.initial_state[i]), 1e-6});
      CHECK(std::abs(bp.grads.initial_state[i] - fd) <= tol);
    }
  }
}

TEST_CASE("flatten/unflatten: exact round trip, initial state excluded") {
  const QualityModelParams<double> p = init_params<double>(5, 4, 3, 8);
  const Vd theta = vqa::flatten(p);
  CHECK_EQ(theta.size(), vqa::flat_size(p));
  QualityModelParams<double> q = QualityModelParams<double>::zeros(5, 4, 3);
  q.initial_state.setConstant(0.0);
  vqa::unflatten_into(theta, q);
  CHECK_EQ(vqa::flatten(q), theta);
  CHECK(q.reduce_w == p.reduce_w);
  CHECK(q.gru.u_cand == p.gru.u_cand);
  CHECK_EQ(q.head_b, p.head_b);
  // initial_state is not part of the flat view
  CHECK(q.initial_state.isZero(0.0));
  Vd bad(theta.size() + 1);
  bad.setZero();
  CHECK_THROWS_AS(vqa::unflatten_into(bad, q), vqa::ShapeError);
}

TEST_CASE("affine variant: mean of affine frame scores") {
  AffineModelParams<double> p = AffineModelParams<double>::zeros(3, 2);
  p.reduce_w(0, 0) = 1.0;
  p.reduce_w(1, 2) = 2.0;
  p.reduce_b << 0.5, -0.5;
  p.head_w << 1.0, 1.0;
  p.head_b = 0.25;
  Md f(2, 3);
  f << 1, 0, 2, 3, 0, 4;
  // frame 0: x = (1.5, 3.5), q = 5.25; frame 1: x = (3.5, 7.5), q = 11.25
  const auto out = vqa::affine_forward(f, p);
  CHECK_EQ(out.frame_scores[0], doctest::Approx(5.25).epsilon(1e-15));
  CHECK_EQ(out.frame_scores[1], doctest::Approx(11.25).epsilon(1e-15));
  CHECK_EQ(out.quality, doctest::Approx(8.25).epsilon(1e-15));
}

TEST_CASE("affine variant: finite-difference gradients") {
  const Index steps = 7, d = 5, r = 4;
  const AffineModelParams<double> p = vqa::init_affine_params<double>(d, r, 55);
  const Md f = random_matrix(66, steps, d, -1.0, 1.0);
  const double upstream = -1.3;
  const auto bp = vqa::affine_forward_backward(f, p, upstream);
  const Vd analytic = vqa::affine_flatten(bp.grads);
  const Vd theta = vqa::affine_flatten(p);
  const double eps = 1e-5;
  for (Index k = 0; k < theta.size(); ++k) {
    AffineModelParams<double> pp = p, pm = p;
    Vd tp = theta, tm = theta;
    tp[k] += eps;
    tm[k] -= eps;
    vqa::affine_unflatten_into(tp, pp);
    vqa::affine_unflatten_into(tm, pm);
    const double fd = upstream *
                      (vqa::affine_forward(f, pp).quality -
                       vqa::affine_forward(f, pm).quality) /
                      (2 * eps);
    CHECK(std::abs(analytic[k] - fd) <=
          1e-6 * std::max({std::abs(fd), std::abs(analytic[k]), 1.0}));
  }
}
