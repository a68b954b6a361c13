#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "obsflow/errors.hpp"
#include "obsflow/fft.hpp"
#include "obsflow/mat.hpp"

namespace obsflow::dynsys {

enum class SystemKind { L63, L96, KS };

/// Identifies a dynamical system, its parameters and its observed/unobserved
/// coordinate split. Indices are 0-based.
///   L63: params = {sigma, rho, beta}, state_dim 3
///   L96: params = {F, d},             state_dim d
///   KS : params = {L_domain, N},      state_dim N (grid values)
struct SystemSpec {
  SystemKind kind = SystemKind::L63;
  std::vector<double> params;
  std::vector<std::size_t> p_indices;
  std::vector<std::size_t> q_indices;

  std::size_t state_dim() const;
  /// Checks the p/q partition and parameter block. Throws ConfigError.
  void validate() const;
};

SystemSpec make_l63(std::vector<std::size_t> p_idx, std::vector<std::size_t> q_idx,
                    double sigma = 10.0, double rho = 28.0, double beta = 8.0 / 3.0);
SystemSpec make_l96(std::size_t d, double F, std::vector<std::size_t> p_idx,
                    std::vector<std::size_t> q_idx);
SystemSpec make_ks(std::size_t n, double L_domain, std::vector<std::size_t> p_idx,
                   std::vector<std::size_t> q_idx);

/// One orbit sampled on a uniform time grid.
struct TrajectoryBundle {
  std::vector<double> times;
  Mat states;  // [num_times x state_dim]
  SystemSpec meta;
  std::uint64_t seed = 0;    // RNG provenance of the initial condition
  std::uint64_t stream = 0;  //   (0 when the IC was given explicitly)

  /// Uniform grid within 1e-12 relative, finite entries, >= 1 row.
  void validate() const;
};

struct FlowState {
  double t = 0.0;
  std::vector<double> x;
};

/// Right-hand sides, templated on the scalar so dual numbers propagate
/// through them unchanged.

template <class S>
inline void lorenz63_rhs_t(const S* x, S* dx, double sigma, double rho, double beta) {
  dx[0] = sigma * (x[1] - x[0]);
  dx[1] = x[0] * (rho - x[2]) - x[1];
  dx[2] = x[0] * x[1] - beta * x[2];
}

template <class S>
inline void lorenz96_rhs_t(const S* u, S* du, std::size_t d, double F) {
  for (std::size_t i = 0; i < d; ++i) {
    const S& up1 = u[(i + 1) % d];
    const S& um2 = u[(i + d - 2) % d];
    const S& um1 = u[(i + d - 1) % d];
    du[i] = (up1 - um2) * um1 - u[i] + F;
  }
}

std::vector<double> lorenz63_rhs(const std::vector<double>& x, double sigma, double rho,
                                 double beta);
std::vector<double> lorenz96_rhs(const std::vector<double>& u, double F);

/// Generic RK4 driver used by both the system integrators and tests with
/// custom fields. Output sample times are t0 + i*dt by integer multiply; dt
/// is internally split into ceil(dt/dt_internal) equal sub-steps.
/// Rhs signature: rhs(t, const std::vector<double>& x, std::vector<double>& dx).
template <class Rhs>
Mat rk4_sample(Rhs&& rhs, const std::vector<double>& x0, double t0, long n_out, double dt,
               double dt_internal, std::vector<double>* times_out = nullptr) {
  const std::size_t d = x0.size();
  Mat out(static_cast<std::size_t>(n_out) + 1, d);
  if (times_out) times_out->resize(static_cast<std::size_t>(n_out) + 1);

  std::vector<double> x = x0, k1(d), k2(d), k3(d), k4(d), tmp(d);
  long n_sub = 1;
  if (n_out > 0) {
    n_sub = static_cast<long>(std::ceil(dt / dt_internal - 1e-9));
    if (n_sub < 1) n_sub = 1;
  }
  for (long i = 0; i <= n_out; ++i) {
    const double ti = t0 + static_cast<double>(i) * dt;
    if (times_out) (*times_out)[static_cast<std::size_t>(i)] = ti;
    for (std::size_t j = 0; j < d; ++j) {
      if (!std::isfinite(x[j]))
        throw IntegrationError("rk4: state became non-finite", ti);
      out(static_cast<std::size_t>(i), j) = x[j];
    }
    if (i == n_out) break;
    const double h = dt / static_cast<double>(n_sub);
    for (long s = 0; s < n_sub; ++s) {
      const double ts = ti + static_cast<double>(s) * h;
      rhs(ts, x, k1);
      for (std::size_t j = 0; j < d; ++j) tmp[j] = x[j] + 0.5 * h * k1[j];
      rhs(ts + 0.5 * h, tmp, k2);
      for (std::size_t j = 0; j < d; ++j) tmp[j] = x[j] + 0.5 * h * k2[j];
      rhs(ts + 0.5 * h, tmp, k3);
      for (std::size_t j = 0; j < d; ++j) tmp[j] = x[j] + h * k3[j];
      rhs(ts + h, tmp, k4);
      for (std::size_t j = 0; j < d; ++j)
        x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
  }
  return out;
}

/// Checks that span/dt is an integer within 1e-9 relative and returns it.
long aligned_steps(double t0, double t1, double dt);

/// Classical RK4 for L63/L96 with dt_internal = min(dt, 0.005).
TrajectoryBundle integrate_rk4(const SystemSpec& spec, const std::vector<double>& x0,
                               double t0, double t1, double dt);

/// ETDRK4 stepper for the KS equation on a periodic grid of n points
/// (n a power of two), grid x_j = j*L/n. The linear symbol k~^2 - k~^4 is
/// treated exactly; the nonlinearity -1/2 d_x(u^2) is pseudospectral with
/// 2/3-rule dealiasing; phi-coefficients use the contour-integral mean.
class KsStepper {
public:
  KsStepper(std::size_t n, double L_domain, double dt);

  void step(std::vector<cxd>& v) const;
  std::vector<cxd> to_spectral(const std::vector<double>& u) const;
  std::vector<double> to_physical(const std::vector<cxd>& v) const;

  std::size_t n() const { return n_; }
  double dt() const { return dt_; }

private:
  std::vector<cxd> nonlinear(const std::vector<cxd>& v) const;

  std::size_t n_;
  double L_, dt_;
  std::vector<double> E_, E2_, Q_, f1_, f2_, f3_;
  std::vector<cxd> g_;  // -(i k~)/2 with dealias mask, Nyquist zeroed
};

TrajectoryBundle ks_integrate_etdrk4(const std::vector<double>& u0, double L_domain,
                                     double dt, long steps);

/// Endpoint of the trajectory from x0 over [0, t]; dispatches on spec.kind
/// (RK4 for L63/L96, ETDRK4 for KS, where dt is the scheme step).
FlowState flow(const SystemSpec& spec, const std::vector<double>& x0, double t, double dt);

Mat project_p(const TrajectoryBundle& b);
Mat project_q(const TrajectoryBundle& b);

}  // namespace obsflow::dynsys
