#include "obsflow/observability.hpp"

#include <doctest.h>

#include <cmath>

#include "obsflow/dynsys.hpp"
#include "obsflow/rng.hpp"

using namespace obsflow;
using namespace obsflow::obs;

namespace {

/// Central-difference Jacobian of the full F stack, step h.
template <class Field>
Mat fd_jacobian_F(const Field& fld, const std::vector<double>& pt, int n, double h) {
  const std::size_t D = fld.dim();
  const std::size_t rows = (static_cast<std::size_t>(n) + 1) * fld.p_idx().size();
  Mat J(rows, D);
  for (std::size_t c = 0; c < D; ++c) {
    std::vector<double> plus = pt, minus = pt;
    plus[c] += h;
    minus[c] -= h;
    const auto fp = build_F(fld, plus, n, true).values;
    const auto fm = build_F(fld, minus, n, true).values;
    for (std::size_t r = 0; r < rows; ++r) J(r, c) = (fp[r] - fm[r]) / (2.0 * h);
  }
  return J;
}

double frobenius(const Mat& m) {
  double s = 0.0;
  for (double v : m.a) s += v * v;
  return std::sqrt(s);
}

Mat mat_sub(const Mat& a, const Mat& b) {
  Mat d = a;
  for (std::size_t i = 0; i < d.a.size(); ++i) d.a[i] -= b.a[i];
  return d;
}

const double kSigma = 10.0, kRho = 28.0, kBeta = 8.0 / 3.0;

Mat l63_analytic_DLF2(double x0, double z0) {
  Mat m(3, 3);
  m(0, 0) = 1;
  m(1, 0) = -kSigma;
  m(1, 1) = kSigma;
  m(2, 0) = kSigma * (kRho + kSigma - z0);
  m(2, 1) = -kSigma * (kSigma + 1.0);
  m(2, 2) = -kSigma * x0;
  return m;
}

}  // namespace

TEST_CASE("lie_derivative basics") {
  const L63Field fld;
  SUBCASE("identity on the p-part gives f itself") {
    const auto h = []<class S>(const std::vector<S>& v) { return std::vector<S>{v[0]}; };
    const auto ld = lie_derivative(fld, h, {1.0, 1.0, 1.0});
    // d/dt x = sigma (y - x) = 0 at (1,1,1).
    CHECK(ld.size() == 1);
    CHECK(ld[0] == 0.0);
    const auto ld2 = lie_derivative(fld, h, {1.0, 3.0, 1.0});
    CHECK(ld2[0] == doctest::Approx(kSigma * 2.0).epsilon(1e-15));
  }
  SUBCASE("constant map has zero Lie derivative") {
    const auto h = []<class S>(const std::vector<S>&) { return std::vector<S>{S(4.2)}; };
    const auto ld = lie_derivative(fld, h, {1.0, 2.0, 3.0});
    CHECK(ld[0] == 0.0);
  }
  SUBCASE("dimension mismatch rejected") {
    const auto h = []<class S>(const std::vector<S>& v) { return std::vector<S>{v[0]}; };
    CHECK_THROWS_AS(lie_derivative(fld, h, {1.0, 2.0}), ConfigError);
  }
}

TEST_CASE("build_F matches the closed form for L63, p = x") {
  const L63Field fld;
  SplitRng rng(21);
  for (int it = 0; it < 50; ++it) {
    const double x0 = rng.uniform(-15, 15), y0 = rng.uniform(-15, 15), z0 = rng.uniform(0, 40);
    const LieStack st = build_F(fld, {x0, y0, z0}, 2, true);
    REQUIRE(st.values.size() == 3);
    CHECK(st.values[0] == x0);
    const double l0 = kSigma * (y0 - x0);
    const double l1 = kSigma * (x0 * (kRho - z0) - y0 - kSigma * (y0 - x0));
    CHECK(st.values[1] == doctest::Approx(l0).epsilon(1e-14));
    CHECK(st.values[2] == doctest::Approx(l1).epsilon(1e-13));
  }
  SUBCASE("include_p = false drops the leading block") {
    const LieStack with_p = build_F(fld, {2, 3, 4}, 2, true);
    const LieStack without = build_F(fld, {2, 3, 4}, 2, false);
    REQUIRE(without.values.size() == 2);
    CHECK(without.values[0] == with_p.values[1]);
    CHECK(without.values[1] == with_p.values[2]);
  }
  SUBCASE("zeroth Lie derivative is f") {
    const LieStack st = build_F(fld, {1, 5, 2}, 1, false);
    CHECK(st.values[0] == doctest::Approx(kSigma * 4.0).epsilon(1e-15));
  }
}

TEST_CASE("Lie stack equals time derivatives of the observed component") {
  // Along a trajectory, L^k f(p(t), q(t)) = d^{k+1}/dt^{k+1} x(t). Check the
  // first three orders against high-order finite differences of a fine orbit.
  using namespace obsflow::dynsys;
  const SystemSpec spec = make_l63({0}, {1, 2});
  const FlowState start = flow(spec, {1.0, 1.0, 1.0}, 5.0, 0.005);  // land on the attractor
  const double h = 1e-3;
  const auto rhs = [](double, const std::vector<double>& x, std::vector<double>& dx) {
    lorenz63_rhs_t(x.data(), dx.data(), kSigma, kRho, kBeta);
  };
  const Mat traj = rk4_sample(rhs, start.x, 0.0, 6, h, 1e-4);
  const auto x = [&](long i) { return traj(static_cast<std::size_t>(i), 0); };
  // 4th-order central stencils at the middle sample (index 3).
  const double d1 = (-x(5) + 8 * x(4) - 8 * x(2) + x(1)) / (12 * h);
  const double d2 = (-x(5) + 16 * x(4) - 30 * x(3) + 16 * x(2) - x(1)) / (12 * h * h);
  const double d3 =
      (-x(6) + 8 * x(5) - 13 * x(4) + 13 * x(2) - 8 * x(1) + x(0)) / (8 * h * h * h);

  const L63Field fld;
  std::vector<double> mid(3);
  for (std::size_t j = 0; j < 3; ++j) mid[j] = traj(3, j);
  const LieStack st = build_F(fld, mid, 3, false);  // L^0, L^1, L^2
  CHECK(std::abs(st.values[0] - d1) <= 1e-4 * std::max(1.0, std::abs(st.values[0])));
  CHECK(std::abs(st.values[1] - d2) <= 1e-4 * std::max(1.0, std::abs(st.values[1])));
  CHECK(std::abs(st.values[2] - d3) <= 1e-4 * std::max(1.0, std::abs(st.values[2])));
}

TEST_CASE("jacobian_LF reproduces the analytic L63 matrix") {
  const L63Field fld;
  Mat I3(3, 3);
  for (int i = 0; i < 3; ++i) I3(i, i) = 1.0;
  SplitRng rng(33);
  for (int it = 0; it < 100; ++it) {
    const double x0 = rng.uniform(-15, 15), y0 = rng.uniform(-15, 15), z0 = rng.uniform(0, 40);
    const Mat J = jacobian_LF(fld, {x0, y0, z0}, 2, I3);
    const Mat A = l63_analytic_DLF2(x0, z0);
    double scale = 0.0;
    for (double v : A.a) scale = std::max(scale, std::abs(v));
    CHECK(frobenius(mat_sub(J, A)) <= 1e-12 * std::max(1.0, scale));
  }
  SUBCASE("third column vanishes at x0 = 0, leaving rank 2") {
    const Mat J = jacobian_LF(fld, {0.0, 3.0, 17.0}, 2, I3);
    CHECK(J(0, 2) == 0.0);
    CHECK(J(1, 2) == 0.0);
    CHECK(J(2, 2) == 0.0);
    std::vector<double> sv;
    CHECK(svd_rank(J, 1e-8, sv) == 2);
  }
  SUBCASE("L shape is validated") {
    Mat bad(2, 3);
    CHECK_THROWS_AS(jacobian_LF(fld, {1, 1, 1}, 2, bad), ConfigError);
  }
}

TEST_CASE("forward-mode Jacobians agree with central differences") {
  SplitRng rng(55);
  SUBCASE("L63, n up to 3") {
    const L63Field fld;
    for (int it = 0; it < 50; ++it) {
      const int n = 1 + static_cast<int>(rng.next_u64() % 3);
      const std::vector<double> pt{rng.uniform(-15, 15), rng.uniform(-15, 15),
                                   rng.uniform(0, 40)};
      const Mat J = jacobian_F(fld, pt, n);
      const Mat F = fd_jacobian_F(fld, pt, n, 1e-6);
      CHECK(frobenius(mat_sub(J, F)) <= 1e-6 * std::max(1.0, frobenius(J)));
    }
  }
  SUBCASE("L96 (d=40, table split), n up to 3") {
    L96Field fld;
    fld.d = 40;
    fld.F = 8.0;
    for (std::size_t i = 0; i <= 20; ++i) fld.p.push_back(i);
    for (std::size_t i = 22; i <= 38; i += 2) fld.p.push_back(i);
    REQUIRE(fld.p.size() == 30);
    for (int it = 0; it < 50; ++it) {
      const int n = 1 + static_cast<int>(rng.next_u64() % 3);
      std::vector<double> pt(40);
      for (auto& v : pt) v = 8.0 + rng.uniform(-5, 5);
      const Mat J = jacobian_F(fld, pt, n);
      const Mat F = fd_jacobian_F(fld, pt, n, 1e-6);
      CHECK(frobenius(mat_sub(J, F)) <= 1e-6 * std::max(1.0, frobenius(J)));
    }
  }
}

TEST_CASE("observability-rank condition for L63, p = x") {
  const L63Field fld;
  SUBCASE("satisfied off the x0 = 0 plane") {
    const RankReport rep = check_observability(fld, {1.0, 1.0, 1.0}, 2, nullptr);
    CHECK(rep.satisfied);
    CHECK(rep.rank == 3);
    CHECK(rep.singular_values.size() == 3);
  }
  SUBCASE("not satisfied on the x0 = 0 plane") {
    SplitRng rng(77);
    for (int it = 0; it < 20; ++it) {
      const RankReport rep = check_observability(
          fld, {0.0, rng.uniform(-15, 15), rng.uniform(0, 40)}, 2, nullptr);
      CHECK_FALSE(rep.satisfied);
      CHECK(rep.rank == 2);
    }
  }
  SUBCASE("tolerance domain is validated") {
    CHECK_THROWS_AS(check_observability(fld, {1, 1, 1}, 2, nullptr, 0.0), ConfigError);
    CHECK_THROWS_AS(check_observability(fld, {1, 1, 1}, 2, nullptr, 1e-2), ConfigError);
  }
  SUBCASE("identity-extension requires a wide enough stack") {
    // n = 1 gives a 2-row stack; three rows are needed.
    CHECK_THROWS_AS(check_observability(fld, {1, 1, 1}, 1, nullptr), ConfigError);
  }
  SUBCASE("report serializes to JSON") {
    const RankReport rep = check_observability(fld, {1.0, 1.0, 1.0}, 2, nullptr);
    const std::string js = rep.to_json();
    CHECK(js.find("\"satisfied\": true") != std::string::npos);
    CHECK(js.find("\"rank\": 3") != std::string::npos);
  }
}

TEST_CASE("scan_region") {
  const L63Field fld;
  SUBCASE("away from x0 = 0 every point satisfies the condition") {
    SplitRng rng(91);
    const auto sampler = [&]() {
      double x0 = 0.0;
      while (std::abs(x0) < 0.1) x0 = rng.uniform(-15, 15);
      return std::vector<double>{x0, rng.uniform(-15, 15), rng.uniform(0, 40)};
    };
    const ScanResult res = scan_region(fld, sampler, 2, 100);
    CHECK(res.fraction == 1.0);
    CHECK(res.failure_points.empty());
  }
  SUBCASE("degenerate sampler at one satisfied point") {
    const auto sampler = [] { return std::vector<double>{2.0, -1.0, 20.0}; };
    const ScanResult res = scan_region(fld, sampler, 2, 5);
    CHECK(res.fraction == 1.0);
  }
  SUBCASE("count = 0 rejected") {
    const auto sampler = [] { return std::vector<double>{1.0, 1.0, 1.0}; };
    CHECK_THROWS_AS(scan_region(fld, sampler, 2, 0), ConfigError);
  }
}

TEST_CASE("z-only observation and the reflection symmetry") {
  // (x,y,z) -> (-x,-y,z) maps solutions to solutions and leaves z unchanged,
  // so every entry of the z-stack is reflection-invariant. Consequences
  // checked here: symmetric pairs produce identical singular values, and on
  // the symmetric set x = y = 0 the differential kills the (x,y)-plane.
  L63Field fld;
  fld.p = {2};
  SplitRng rng(13);
  SUBCASE("rank collapses on the symmetric set") {
    for (int n = 2; n <= 4; ++n) {
      for (int it = 0; it < 5; ++it) {
        const RankReport rep =
            check_observability(fld, {0.0, 0.0, rng.uniform(0, 40)}, n, nullptr);
        CHECK_FALSE(rep.satisfied);
        CHECK(rep.rank <= 1);
      }
    }
  }
  SUBCASE("symmetric pairs report identical spectra") {
    for (int it = 0; it < 10; ++it) {
      const double x0 = rng.uniform(-15, 15), y0 = rng.uniform(-15, 15),
                   z0 = rng.uniform(0, 40);
      const RankReport a = check_observability(fld, {x0, y0, z0}, 3, nullptr);
      const RankReport b = check_observability(fld, {-x0, -y0, z0}, 3, nullptr);
      REQUIRE(a.singular_values.size() == b.singular_values.size());
      for (std::size_t i = 0; i < a.singular_values.size(); ++i)
        CHECK(a.singular_values[i] ==
              doctest::Approx(b.singular_values[i]).epsilon(1e-9).scale(1.0));
      CHECK(a.rank == b.rank);
    }
  }
}
