#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <random>

#include "gretel/tape.hpp"

using namespace gretel;
using namespace gretel::ad;

namespace {

Mat randn(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Mat m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = d(rng);
  return m;
}

// Finite-difference check of d f(x) / dx where f builds a scalar on a fresh
// tape from the leaf value. Returns max elementwise relative error.
double fd_check(Mat x, const std::function<Var(Tape&, Var)>& f, double h = 1e-6) {
  Tape t;
  Var leaf = make(t, x);
  Var out = f(t, leaf);
  REQUIRE(out.val().size() == 1);
  t.backward(out.idx);
  Mat analytic = t.grad(leaf.idx);

  double max_rel = 0.0;
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      Mat xp = x, xm = x;
      xp(r, c) += h;
      xm(r, c) -= h;
      Tape tp, tm;
      double fp = f(tp, make(tp, xp)).val()(0, 0);
      double fm = f(tm, make(tm, xm)).val()(0, 0);
      double numeric = (fp - fm) / (2.0 * h);
      double denom = std::max(1e-6, std::abs(numeric) + std::abs(analytic(r, c)));
      max_rel = std::max(max_rel, std::abs(numeric - analytic(r, c)) / denom);
    }
  return max_rel;
}

// Weighted sum so every output element influences the scalar differently;
// a plain sum would hide transposition or permutation bugs.
Var pin(Tape& t, Var y) {
  Mat w(y.rows(), y.cols());
  for (Eigen::Index c = 0; c < w.cols(); ++c)
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      w(r, c) = 0.3 + 0.7 * std::sin(1.0 + 2.0 * r + 3.0 * c);
  return sum_all(cmul(y, make(t, w)));
}

}  // namespace

TEST_CASE("elementwise and linear primitives pass finite differences") {
  std::mt19937_64 rng(3);
  Mat x = randn(4, 5, rng);
  Mat b = randn(4, 5, rng);
  Mat w = randn(5, 3, rng);
  Mat rv = randn(1, 5, rng);

  CHECK(fd_check(x, [&](Tape& t, Var v) { return pin(t, add(v, make(t, b))); }) < 1e-7);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return pin(t, sub(make(t, b), v)); }) < 1e-7);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return pin(t, scale(v, -1.7)); }) < 1e-7);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return pin(t, add_const(v, b)); }) < 1e-7);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return pin(t, cmul(v, make(t, b))); }) < 1e-7);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return pin(t, matmul(v, make(t, w))); }) < 1e-6);
  CHECK(fd_check(w, [&](Tape& t, Var v) { return pin(t, matmul(make(t, x), v)); }) < 1e-6);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return pin(t, transpose(v)); }) < 1e-7);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return pin(t, add_rowvec(v, make(t, rv))); }) < 1e-7);
  CHECK(fd_check(rv, [&](Tape& t, Var v) { return pin(t, add_rowvec(make(t, x), v)); }) < 1e-7);
}

TEST_CASE("nonlinearities pass finite differences") {
  std::mt19937_64 rng(4);
  Mat x = randn(3, 4, rng);
  Mat pos = (randn(3, 4, rng).array().abs() + 0.5).matrix();

  CHECK(fd_check(x, [&](Tape& t, Var v) { return pin(t, exp_(v)); }) < 1e-6);
  CHECK(fd_check(pos, [&](Tape& t, Var v) { return pin(t, log_(v)); }) < 1e-6);
  CHECK(fd_check(pos, [&](Tape& t, Var v) { return pin(t, sqrt_(v)); }) < 1e-6);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return pin(t, sigmoid(v)); }) < 1e-6);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return pin(t, gelu(v)); }) < 1e-6);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return pin(t, softplus(v)); }) < 1e-6);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return pin(t, softmax_rows(v)); }) < 1e-6);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return pin(t, normalize_rows(v)); }) < 1e-6);
}

TEST_CASE("shape primitives pass finite differences") {
  std::mt19937_64 rng(5);
  Mat x = randn(5, 4, rng);

  CHECK(fd_check(x, [&](Tape& t, Var v) { return pin(t, slice_rows(v, 1, 3)); }) < 1e-7);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return pin(t, slice_cols(v, 2, 2)); }) < 1e-7);
  CHECK(fd_check(x, [&](Tape& t, Var v) {
          return pin(t, concat_cols({slice_cols(v, 0, 2), slice_cols(v, 2, 2)}));
        }) < 1e-7);
  CHECK(fd_check(x, [&](Tape& t, Var v) {
          return pin(t, concat_rows({slice_rows(v, 0, 2), slice_rows(v, 2, 3)}));
        }) < 1e-7);
  // duplicate indices must accumulate
  CHECK(fd_check(x, [&](Tape& t, Var v) {
          return pin(t, gather_rows(v, {0, 2, 2, 4, 0}));
        }) < 1e-7);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return pin(t, rowsum(v)); }) < 1e-7);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return pin(t, colmean(v)); }) < 1e-7);
  CHECK(fd_check(x, [&](Tape& t, Var v) { return sum_all(v); }) < 1e-7);
}

TEST_CASE("layernorm passes finite differences for x, gain and bias") {
  std::mt19937_64 rng(6);
  Mat x = randn(3, 6, rng);
  Mat g = (randn(1, 6, rng).array() * 0.1 + 1.0).matrix();
  Mat b = randn(1, 6, rng, 0.1);

  CHECK(fd_check(x, [&](Tape& t, Var v) {
          return pin(t, layernorm_rows(v, make(t, g), make(t, b)));
        }) < 1e-5);
  CHECK(fd_check(g, [&](Tape& t, Var v) {
          return pin(t, layernorm_rows(make(t, x), v, make(t, b)));
        }) < 1e-6);
  CHECK(fd_check(b, [&](Tape& t, Var v) {
          return pin(t, layernorm_rows(make(t, x), make(t, g), v));
        }) < 1e-7);
}

TEST_CASE("clamp passes gradient only in the interior") {
  Mat x(1, 3);
  x << -2.0, 0.5, 3.0;
  Tape t;
  Var v = make(t, x);
  Var y = clamp(v, -1.0, 1.0);
  CHECK(y.val()(0, 0) == -1.0);
  CHECK(y.val()(0, 1) == 0.5);
  CHECK(y.val()(0, 2) == 1.0);
  t.backward(sum_all(y).idx);
  CHECK(t.grad(v.idx)(0, 0) == 0.0);
  CHECK(t.grad(v.idx)(0, 1) == 1.0);
  CHECK(t.grad(v.idx)(0, 2) == 0.0);
}

TEST_CASE("value fixtures") {
  Tape t;
  // softmax rows sum to one and match a hand computation
  Mat x(1, 3);
  x << 1.0, 0.0, 0.0;
  Var s = softmax_rows(make(t, x));
  double z = std::exp(1.0) + 2.0;
  CHECK(s.val()(0, 0) == doctest::Approx(std::exp(1.0) / z));
  CHECK(s.val()(0, 1) == doctest::Approx(1.0 / z));
  CHECK(s.val().sum() == doctest::Approx(1.0));

  // softplus is stable for large inputs
  Mat big(1, 2);
  big << 800.0, -800.0;
  Var sp = softplus(make(t, big));
  CHECK(sp.val()(0, 0) == doctest::Approx(800.0));
  CHECK(sp.val()(0, 1) == doctest::Approx(0.0));
  CHECK(sp.val().allFinite());

  // gelu at a few reference points (erf form)
  Mat gx(1, 3);
  gx << 0.0, 1.0, -1.0;
  Var gy = gelu(make(t, gx));
  CHECK(gy.val()(0, 0) == doctest::Approx(0.0));
  CHECK(gy.val()(0, 1) == doctest::Approx(0.8413447461));  // 1 * Phi(1)
  CHECK(gy.val()(0, 2) == doctest::Approx(-0.1586552539));

  // layernorm with unit gain / zero bias produces zero-mean unit-variance rows
  Mat lx(2, 8);
  lx << 1, 2, 3, 4, 5, 6, 7, 8, -3, 0, 1, 9, 2, 2, 2, 2;
  Var ln = layernorm_rows(make(t, lx), make(t, Mat::Ones(1, 8)), make(t, Mat::Zero(1, 8)));
  for (int r = 0; r < 2; ++r) {
    CHECK(ln.val().row(r).mean() == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(ln.val().row(r).squaredNorm() / 8.0 == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("unused branches are skipped, shared nodes accumulate") {
  Tape t;
  Var a = make(t, Mat::Constant(2, 2, 1.5));
  Var unused = exp_(a);  // never reaches the root
  Var y = sum_all(cmul(a, a));
  t.backward(y.idx);
  CHECK(t.grad(a.idx)(0, 0) == doctest::Approx(3.0));  // d(a^2)/da = 2a
  CHECK_FALSE(t.has_grad(unused.idx));

  // diamond: z = sum(a + a) gives gradient 2
  Tape t2;
  Var b = make(t2, Mat::Constant(1, 1, 0.7));
  Var z = sum_all(add(b, b));
  t2.backward(z.idx);
  CHECK(t2.grad(b.idx)(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("check_finite raises NumericError") {
  Tape t;
  Mat bad(1, 2);
  bad << 1.0, std::numeric_limits<double>::quiet_NaN();
  Var v = make(t, bad);
  CHECK_THROWS_AS(check_finite(v, "test"), NumericError);
  Var ok = make(t, Mat::Ones(1, 2));
  CHECK_NOTHROW(check_finite(ok, "test"));
}
