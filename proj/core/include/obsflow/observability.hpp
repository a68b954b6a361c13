#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "obsflow/dual.hpp"
#include "obsflow/dynsys.hpp"
#include "obsflow/errors.hpp"
#include "obsflow/mat.hpp"

namespace obsflow::obs {

using ad::Dual;

/// A field exposes the coupled right-hand side w = (f, g) with a scalar type
/// generic enough for nested duals, plus the observed-index split:
///   std::size_t dim() const;
///   const std::vector<std::size_t>& p_idx() const;
///   template <class S> void rhs(const std::vector<S>& v, std::vector<S>& out) const;
template <class F>
concept VectorField = requires(const F f, const std::vector<double>& v,
                               std::vector<double>& out) {
  { f.dim() } -> std::convertible_to<std::size_t>;
  { f.p_idx() } -> std::convertible_to<std::vector<std::size_t>>;
  f.rhs(v, out);
};

struct L63Field {
  double sigma = 10.0, rho = 28.0, beta = 8.0 / 3.0;
  std::vector<std::size_t> p{0};

  std::size_t dim() const { return 3; }
  const std::vector<std::size_t>& p_idx() const { return p; }

  template <class S>
  void rhs(const std::vector<S>& v, std::vector<S>& out) const {
    out.resize(3);
    dynsys::lorenz63_rhs_t(v.data(), out.data(), sigma, rho, beta);
  }
};

struct L96Field {
  std::size_t d = 40;
  double F = 8.0;
  std::vector<std::size_t> p;

  std::size_t dim() const { return d; }
  const std::vector<std::size_t>& p_idx() const { return p; }

  template <class S>
  void rhs(const std::vector<S>& v, std::vector<S>& out) const {
    out.resize(d);
    dynsys::lorenz96_rhs_t(v.data(), out.data(), d, F);
  }
};

/// KS right-hand side as a polynomial field via dense spectral
/// differentiation matrices: rhs = A u - u .* (B u), A = -(D2 + D4), B = D1.
/// Dimension N makes rank scans expensive; exposed, not default-tested.
struct KsField {
  std::size_t n = 0;
  double L_domain = 0.0;
  Mat A;  // [n x n]
  Mat B;  // [n x n]
  std::vector<std::size_t> p;

  std::size_t dim() const { return n; }
  const std::vector<std::size_t>& p_idx() const { return p; }

  template <class S>
  void rhs(const std::vector<S>& v, std::vector<S>& out) const {
    out.assign(n, S(0.0));
    std::vector<S> bu(n, S(0.0));
    for (std::size_t i = 0; i < n; ++i) {
      S acc_a(0.0), acc_b(0.0);
      const double* arow = A.row(i);
      const double* brow = B.row(i);
      for (std::size_t j = 0; j < n; ++j) {
        acc_a += arow[j] * v[j];
        acc_b += brow[j] * v[j];
      }
      out[i] = acc_a;
      bu[i] = acc_b;
    }
    for (std::size_t i = 0; i < n; ++i) out[i] -= v[i] * bu[i];
  }
};

KsField make_ks_field(std::size_t n, double L_domain, std::vector<std::size_t> p_idx);

/// Lie-derivative stack at a point: optionally p, then L^0 f ... L^{n-1} f.
struct LieStack {
  int n = 0;
  bool includes_p = true;
  std::vector<double> values;      // (n+1)*d_p entries, or n*d_p without p
  std::vector<double> base_point;  // d_p + d_q entries
};

struct RankReport {
  int n = 0;
  Mat L;                               // [(d_p+d_q) x (n+1)d_p]
  Mat jacobian;                        // [(d_p+d_q) x (d_p+d_q)]
  std::vector<double> singular_values; // descending
  int rank = 0;
  bool satisfied = false;
  double tolerance = 0.0;              // relative to sigma_max
  std::vector<double> point;

  std::string to_json() const;
};

struct ScanResult {
  std::size_t count = 0;
  std::size_t satisfied_count = 0;
  double fraction = 0.0;
  std::vector<std::vector<double>> failure_points;
};

constexpr int kMaxLieOrder = 6;  // stack order n <= 6, i.e. up to L^5 f

namespace detail {

template <VectorField Field, class S>
void eval_f_p(const Field& fld, const std::vector<S>& v, std::vector<S>& out) {
  std::vector<S> full;
  fld.rhs(v, full);
  const auto& p = fld.p_idx();
  out.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = full[p[i]];
}

/// L^K f at v, by seeding the direction w = (f, g) one dual level down.
template <VectorField Field, class S, int K>
struct LieEval {
  static std::vector<S> eval(const Field& fld, const std::vector<S>& v) {
    std::vector<S> w;
    fld.rhs(v, w);
    std::vector<Dual<S>> vd(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) vd[i] = Dual<S>(v[i], w[i]);
    const std::vector<Dual<S>> up = LieEval<Field, Dual<S>, K - 1>::eval(fld, vd);
    std::vector<S> out(up.size());
    for (std::size_t i = 0; i < up.size(); ++i) out[i] = up[i].d;
    return out;
  }
};

template <VectorField Field, class S>
struct LieEval<Field, S, 0> {
  static std::vector<S> eval(const Field& fld, const std::vector<S>& v) {
    std::vector<S> out;
    eval_f_p(fld, v, out);
    return out;
  }
};

template <VectorField Field, class S>
std::vector<S> lie_f(const Field& fld, const std::vector<S>& v, int k) {
  switch (k) {
    case 0: return LieEval<Field, S, 0>::eval(fld, v);
    case 1: return LieEval<Field, S, 1>::eval(fld, v);
    case 2: return LieEval<Field, S, 2>::eval(fld, v);
    case 3: return LieEval<Field, S, 3>::eval(fld, v);
    case 4: return LieEval<Field, S, 4>::eval(fld, v);
    case 5: return LieEval<Field, S, 5>::eval(fld, v);
    default: throw ConfigError("lie derivative order above " + std::to_string(kMaxLieOrder - 1));
  }
}

template <VectorField Field, class S>
std::vector<S> stack_F(const Field& fld, const std::vector<S>& v, int n, bool include_p) {
  if (n < 1) throw ConfigError("stack order n must be >= 1");
  if (n > kMaxLieOrder) throw ConfigError("stack order n above " + std::to_string(kMaxLieOrder));
  const auto& p = fld.p_idx();
  std::vector<S> out;
  out.reserve((static_cast<std::size_t>(n) + (include_p ? 1 : 0)) * p.size());
  if (include_p)
    for (std::size_t i : p) out.push_back(v[i]);
  for (int k = 0; k < n; ++k) {
    const std::vector<S> lk = lie_f<Field, S>(fld, v, k);
    out.insert(out.end(), lk.begin(), lk.end());
  }
  return out;
}

}  // namespace detail

/// Numerical rank of m: count of singular values > tol_rel * sigma_max.
/// Singular values returned descending. Implemented with an SVD in the .cpp.
int svd_rank(const Mat& m, double tol_rel, std::vector<double>& singular_values);

/// Dense matmul helper for L * J.
Mat matmul(const Mat& a, const Mat& b);

/// Directional derivative Dh(point) . w(point) along the coupled field,
/// for a generic map h: vector<S> -> vector<S>.
template <VectorField Field, class H>
std::vector<double> lie_derivative(const Field& fld, H&& h, const std::vector<double>& point) {
  if (point.size() != fld.dim()) throw ConfigError("lie_derivative: point dimension mismatch");
  std::vector<double> w;
  fld.rhs(point, w);
  std::vector<Dual<double>> vd(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) vd[i] = Dual<double>(point[i], w[i]);
  const std::vector<Dual<double>> hv = h(vd);
  std::vector<double> out(hv.size());
  for (std::size_t i = 0; i < hv.size(); ++i) out[i] = hv[i].d;
  return out;
}

template <VectorField Field>
LieStack build_F(const Field& fld, const std::vector<double>& point, int n, bool include_p) {
  if (point.size() != fld.dim()) throw ConfigError("build_F: point dimension mismatch");
  LieStack st;
  st.n = n;
  st.includes_p = include_p;
  st.base_point = point;
  st.values = detail::stack_F(fld, point, n, include_p);
  return st;
}

/// Jacobian of the full F stack (with p), shape [(n+1)d_p x (d_p+d_q)],
/// by per-coordinate forward seeds.
template <VectorField Field>
Mat jacobian_F(const Field& fld, const std::vector<double>& point, int n) {
  const std::size_t D = fld.dim();
  if (point.size() != D) throw ConfigError("jacobian_F: point dimension mismatch");
  const std::size_t rows = (static_cast<std::size_t>(n) + 1) * fld.p_idx().size();
  Mat J(rows, D);
  for (std::size_t c = 0; c < D; ++c) {
    std::vector<Dual<double>> v(D);
    for (std::size_t i = 0; i < D; ++i)
      v[i] = Dual<double>(point[i], i == c ? 1.0 : 0.0);
    const std::vector<Dual<double>> st = detail::stack_F(fld, v, n, true);
    if (st.size() != rows) throw ConfigError("jacobian_F: stack size mismatch");
    for (std::size_t r = 0; r < rows; ++r) J(r, c) = st[r].d;
  }
  return J;
}

/// Jacobian of point -> L . F^(n)(point), shape [(d_p+d_q) x (d_p+d_q)].
template <VectorField Field>
Mat jacobian_LF(const Field& fld, const std::vector<double>& point, int n, const Mat& L) {
  const std::size_t D = fld.dim();
  const std::size_t stack_len = (static_cast<std::size_t>(n) + 1) * fld.p_idx().size();
  if (L.rows != D || L.cols != stack_len)
    throw ConfigError("jacobian_LF: L must be [(d_p+d_q) x (n+1)d_p]");
  return matmul(L, jacobian_F(fld, point, n));
}

/// L selecting the first d_p+d_q rows of the stack. Requires (n+1)d_p >= d_p+d_q.
template <VectorField Field>
Mat identity_extension(const Field& fld, int n) {
  const std::size_t D = fld.dim();
  const std::size_t stack_len = (static_cast<std::size_t>(n) + 1) * fld.p_idx().size();
  if (stack_len < D)
    throw ConfigError("identity-extension needs (n+1)*d_p >= d_p+d_q; raise n");
  Mat L(D, stack_len);
  for (std::size_t i = 0; i < D; ++i) L(i, i) = 1.0;
  return L;
}

/// Observability-rank test at a point. L = nullptr selects the
/// identity-extension. tolerance is relative to the largest singular value.
template <VectorField Field>
RankReport check_observability(const Field& fld, const std::vector<double>& point, int n,
                               const Mat* L, double tolerance = 1e-8) {
  if (!(tolerance > 0.0 && tolerance <= 1e-3))
    throw ConfigError("rank tolerance must lie in (0, 1e-3]");
  RankReport rep;
  rep.n = n;
  rep.point = point;
  rep.tolerance = tolerance;
  rep.L = L ? *L : identity_extension(fld, n);
  rep.jacobian = jacobian_LF(fld, point, n, rep.L);
  rep.rank = svd_rank(rep.jacobian, tolerance, rep.singular_values);
  rep.satisfied = rep.rank == static_cast<int>(fld.dim());
  return rep;
}

/// Rank test over sampled points; sampler() yields one point per call.
template <VectorField Field>
ScanResult scan_region(const Field& fld, const std::function<std::vector<double>()>& sampler,
                       int n, std::size_t count, double tolerance = 1e-8) {
  if (count < 1) throw ConfigError("scan_region: count must be >= 1");
  ScanResult res;
  res.count = count;
  for (std::size_t i = 0; i < count; ++i) {
    const std::vector<double> pt = sampler();
    const RankReport rep = check_observability(fld, pt, n, nullptr, tolerance);
    if (rep.satisfied)
      ++res.satisfied_count;
    else
      res.failure_points.push_back(pt);
  }
  res.fraction = static_cast<double>(res.satisfied_count) / static_cast<double>(count);
  return res;
}

}  // namespace obsflow::obs
