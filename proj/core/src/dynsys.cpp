#include "obsflow/dynsys.hpp"

#include <algorithm>
#include <cmath>

namespace obsflow::dynsys {

std::size_t SystemSpec::state_dim() const {
  switch (kind) {
    case SystemKind::L63:
      return 3;
    case SystemKind::L96:
      if (params.size() < 2) throw ConfigError("L96 spec needs params {F, d}");
      return static_cast<std::size_t>(params[1]);
    case SystemKind::KS:
      if (params.size() < 2) throw ConfigError("KS spec needs params {L_domain, N}");
      return static_cast<std::size_t>(params[1]);
  }
  throw ConfigError("unknown system kind");
}

void SystemSpec::validate() const {
  const std::size_t d = state_dim();
  switch (kind) {
    case SystemKind::L63:
      if (params.size() != 3) throw ConfigError("L63 needs params {sigma, rho, beta}");
      break;
    case SystemKind::L96:
      if (params.size() != 2) throw ConfigError("L96 needs params {F, d}");
      if (d < 4) throw ConfigError("L96 needs dimension >= 4");
      if (params[1] != std::floor(params[1])) throw ConfigError("L96 dimension must be integral");
      break;
    case SystemKind::KS:
      if (params.size() != 2) throw ConfigError("KS needs params {L_domain, N}");
      if (!is_pow2(d)) throw ConfigError("KS grid size must be a power of two");
      if (params[0] <= 0.0) throw ConfigError("KS domain length must be positive");
      break;
  }
  // p and q must partition {0..d-1}.
  std::vector<char> seen(d, 0);
  for (std::size_t i : p_indices) {
    if (i >= d || seen[i]) throw ConfigError("p_indices invalid or overlapping");
    seen[i] = 1;
  }
  for (std::size_t i : q_indices) {
    if (i >= d || seen[i]) throw ConfigError("q_indices invalid or overlapping");
    seen[i] = 1;
  }
  for (std::size_t i = 0; i < d; ++i)
    if (!seen[i]) throw ConfigError("p_indices and q_indices must cover every coordinate");
}

SystemSpec make_l63(std::vector<std::size_t> p_idx, std::vector<std::size_t> q_idx,
                    double sigma, double rho, double beta) {
  SystemSpec s;
  s.kind = SystemKind::L63;
  s.params = {sigma, rho, beta};
  s.p_indices = std::move(p_idx);
  s.q_indices = std::move(q_idx);
  s.validate();
  return s;
}

SystemSpec make_l96(std::size_t d, double F, std::vector<std::size_t> p_idx,
                    std::vector<std::size_t> q_idx) {
  SystemSpec s;
  s.kind = SystemKind::L96;
  s.params = {F, static_cast<double>(d)};
  s.p_indices = std::move(p_idx);
  s.q_indices = std::move(q_idx);
  s.validate();
  return s;
}

SystemSpec make_ks(std::size_t n, double L_domain, std::vector<std::size_t> p_idx,
                   std::vector<std::size_t> q_idx) {
  SystemSpec s;
  s.kind = SystemKind::KS;
  s.params = {L_domain, static_cast<double>(n)};
  s.p_indices = std::move(p_idx);
  s.q_indices = std::move(q_idx);
  s.validate();
  return s;
}

void TrajectoryBundle::validate() const {
  if (times.empty() || states.rows != times.size())
    throw ConfigError("trajectory: empty or row/time mismatch");
  if (times.size() >= 2) {
    const double dt = times[1] - times[0];
    if (dt <= 0.0) throw ConfigError("trajectory: times must increase");
    for (std::size_t i = 0; i < times.size(); ++i) {
      const double expect = times[0] + static_cast<double>(i) * dt;
      if (std::abs(times[i] - expect) > 1e-12 * std::max(1.0, std::abs(expect)))
        throw ConfigError("trajectory: non-uniform time grid");
    }
  }
  for (double v : states.a)
    if (!std::isfinite(v)) throw NumericalError("trajectory: non-finite state");
}

static void check_finite(const std::vector<double>& x, const char* who) {
  for (double v : x)
    if (!std::isfinite(v)) throw NumericalError(std::string(who) + ": non-finite input");
}

std::vector<double> lorenz63_rhs(const std::vector<double>& x, double sigma, double rho,
                                 double beta) {
  if (x.size() != 3) throw ConfigError("lorenz63_rhs: state must have 3 components");
  check_finite(x, "lorenz63_rhs");
  std::vector<double> dx(3);
  lorenz63_rhs_t(x.data(), dx.data(), sigma, rho, beta);
  return dx;
}

std::vector<double> lorenz96_rhs(const std::vector<double>& u, double F) {
  if (u.size() < 4) throw ConfigError("lorenz96_rhs: dimension must be >= 4");
  check_finite(u, "lorenz96_rhs");
  std::vector<double> du(u.size());
  lorenz96_rhs_t(u.data(), du.data(), u.size(), F);
  return du;
}

long aligned_steps(double t0, double t1, double dt) {
  if (dt <= 0.0) throw ConfigError("dt must be positive");
  if (t1 < t0) throw ConfigError("t1 must be >= t0");
  const double r = (t1 - t0) / dt;
  const long n = std::lround(r);
  if (std::abs(r - static_cast<double>(n)) > 1e-9 * std::max(1.0, std::abs(r)))
    throw ConfigError("(t1 - t0) must be an integer multiple of dt");
  return n;
}

TrajectoryBundle integrate_rk4(const SystemSpec& spec, const std::vector<double>& x0,
                               double t0, double t1, double dt) {
  spec.validate();
  if (spec.kind == SystemKind::KS)
    throw ConfigError("integrate_rk4: KS uses the ETDRK4 integrator");
  if (x0.size() != spec.state_dim()) throw ConfigError("integrate_rk4: x0 dimension mismatch");
  check_finite(x0, "integrate_rk4");
  const long n_out = aligned_steps(t0, t1, dt);
  const double dt_internal = std::min(dt, 0.005);

  TrajectoryBundle b;
  b.meta = spec;
  if (spec.kind == SystemKind::L63) {
    const double s = spec.params[0], r = spec.params[1], be = spec.params[2];
    b.states = rk4_sample(
        [s, r, be](double, const std::vector<double>& x, std::vector<double>& dx) {
          lorenz63_rhs_t(x.data(), dx.data(), s, r, be);
        },
        x0, t0, n_out, dt, dt_internal, &b.times);
  } else {
    const double F = spec.params[0];
    const std::size_t d = spec.state_dim();
    b.states = rk4_sample(
        [F, d](double, const std::vector<double>& x, std::vector<double>& dx) {
          lorenz96_rhs_t(x.data(), dx.data(), d, F);
        },
        x0, t0, n_out, dt, dt_internal, &b.times);
  }
  return b;
}

KsStepper::KsStepper(std::size_t n, double L_domain, double dt)
    : n_(n), L_(L_domain), dt_(dt) {
  if (!is_pow2(n_)) throw ConfigError("KS: grid size must be a power of two");
  if (L_ <= 0.0 || dt_ <= 0.0) throw ConfigError("KS: L_domain and dt must be positive");

  E_.resize(n_);
  E2_.resize(n_);
  Q_.resize(n_);
  f1_.resize(n_);
  f2_.resize(n_);
  f3_.resize(n_);
  g_.resize(n_);

  const long half = static_cast<long>(n_) / 2;
  const long kcut = static_cast<long>(n_) / 3;  // 2/3-rule: keep |k| <= floor(N/3)
  const int M = 32;                             // contour points for the phi means

  for (std::size_t k = 0; k < n_; ++k) {
    const long sk = (static_cast<long>(k) <= half) ? static_cast<long>(k)
                                                   : static_cast<long>(k) - static_cast<long>(n_);
    const double kt = 2.0 * M_PI * static_cast<double>(sk) / L_;
    const double lam = kt * kt - kt * kt * kt * kt;
    E_[k] = std::exp(dt_ * lam);
    E2_[k] = std::exp(0.5 * dt_ * lam);

    cxd q(0.0), a1(0.0), a2(0.0), a3(0.0);
    for (int m = 0; m < M; ++m) {
      const double th = M_PI * (static_cast<double>(m) + 0.5) / static_cast<double>(M);
      const cxd LR = dt_ * lam + cxd(std::cos(th), std::sin(th));
      const cxd eLR = std::exp(LR);
      const cxd LR2 = LR * LR, LR3 = LR2 * LR;
      q += (std::exp(LR * 0.5) - 1.0) / LR;
      a1 += (-4.0 - LR + eLR * (4.0 - 3.0 * LR + LR2)) / LR3;
      a2 += (2.0 + LR + eLR * (-2.0 + LR)) / LR3;
      a3 += (-4.0 - 3.0 * LR - LR2 + eLR * (4.0 - LR)) / LR3;
    }
    const double inv_m = 1.0 / static_cast<double>(M);
    Q_[k] = dt_ * (q * inv_m).real();
    f1_[k] = dt_ * (a1 * inv_m).real();
    f2_[k] = dt_ * (a2 * inv_m).real();
    f3_[k] = dt_ * (a3 * inv_m).real();

    const bool keep = std::abs(sk) <= kcut && std::abs(sk) != half;
    g_[k] = keep ? cxd(0.0, -0.5 * kt) : cxd(0.0, 0.0);
  }
}

std::vector<cxd> KsStepper::to_spectral(const std::vector<double>& u) const {
  if (u.size() != n_) throw ConfigError("KS: field size mismatch");
  return fft_real(u);
}

std::vector<double> KsStepper::to_physical(const std::vector<cxd>& v) const {
  return ifft_real(v);
}

std::vector<cxd> KsStepper::nonlinear(const std::vector<cxd>& v) const {
  std::vector<cxd> t(v);
  for (std::size_t k = 0; k < n_; ++k)
    if (g_[k] == cxd(0.0, 0.0) && k != 0) t[k] = 0.0;  // dealias the product inputs
  ifft(t);
  std::vector<double> u(n_);
  for (std::size_t i = 0; i < n_; ++i) u[i] = t[i].real();
  std::vector<cxd> w(n_);
  for (std::size_t i = 0; i < n_; ++i) w[i] = cxd(u[i] * u[i], 0.0);
  fft(w);
  for (std::size_t k = 0; k < n_; ++k) w[k] *= g_[k];
  return w;
}

void KsStepper::step(std::vector<cxd>& v) const {
  if (v.size() != n_) throw ConfigError("KS: spectral state size mismatch");
  const std::vector<cxd> Nv = nonlinear(v);
  std::vector<cxd> a(n_), b(n_), c(n_);
  for (std::size_t k = 0; k < n_; ++k) a[k] = E2_[k] * v[k] + Q_[k] * Nv[k];
  const std::vector<cxd> Na = nonlinear(a);
  for (std::size_t k = 0; k < n_; ++k) b[k] = E2_[k] * v[k] + Q_[k] * Na[k];
  const std::vector<cxd> Nb = nonlinear(b);
  for (std::size_t k = 0; k < n_; ++k) c[k] = E2_[k] * a[k] + Q_[k] * (2.0 * Nb[k] - Nv[k]);
  const std::vector<cxd> Nc = nonlinear(c);
  for (std::size_t k = 0; k < n_; ++k)
    v[k] = E_[k] * v[k] + f1_[k] * Nv[k] + 2.0 * f2_[k] * (Na[k] + Nb[k]) + f3_[k] * Nc[k];
}

TrajectoryBundle ks_integrate_etdrk4(const std::vector<double>& u0, double L_domain,
                                     double dt, long steps) {
  if (steps < 0) throw ConfigError("KS: steps must be >= 0");
  check_finite(u0, "ks_integrate_etdrk4");
  const std::size_t n = u0.size();
  KsStepper st(n, L_domain, dt);

  TrajectoryBundle b;
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  b.meta = make_ks(n, L_domain, all, {});
  b.times.resize(static_cast<std::size_t>(steps) + 1);
  b.states = Mat(static_cast<std::size_t>(steps) + 1, n);

  std::vector<cxd> v = st.to_spectral(u0);
  for (long i = 0; i <= steps; ++i) {
    b.times[static_cast<std::size_t>(i)] = static_cast<double>(i) * dt;
    const std::vector<double> u = st.to_physical(v);
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(u[j]))
        throw IntegrationError("KS: state became non-finite", static_cast<double>(i) * dt);
      b.states(static_cast<std::size_t>(i), j) = u[j];
    }
    if (i == steps) break;
    st.step(v);
  }
  return b;
}

FlowState flow(const SystemSpec& spec, const std::vector<double>& x0, double t, double dt) {
  spec.validate();
  if (t < 0.0) throw ConfigError("flow: t must be >= 0");
  FlowState fs;
  if (t == 0.0) {
    fs.t = 0.0;
    fs.x = x0;
    check_finite(fs.x, "flow");
    return fs;
  }
  if (spec.kind == SystemKind::KS) {
    const long steps = aligned_steps(0.0, t, dt);
    const TrajectoryBundle b = ks_integrate_etdrk4(x0, spec.params[0], dt, steps);
    fs.t = t;
    fs.x.assign(b.states.row(b.states.rows - 1), b.states.row(b.states.rows - 1) + b.states.cols);
    return fs;
  }
  const TrajectoryBundle b = integrate_rk4(spec, x0, 0.0, t, dt);
  fs.t = t;
  fs.x.assign(b.states.row(b.states.rows - 1), b.states.row(b.states.rows - 1) + b.states.cols);
  return fs;
}

Mat project_p(const TrajectoryBundle& b) { return select_cols(b.states, b.meta.p_indices); }
Mat project_q(const TrajectoryBundle& b) { return select_cols(b.states, b.meta.q_indices); }

}  // namespace obsflow::dynsys
