#include "obsflow/observability.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "obsflow/fft.hpp"

namespace obsflow::obs {

int svd_rank(const Mat& m, double tol_rel, std::vector<double>& singular_values) {
  if (m.empty()) throw ConfigError("svd_rank: empty matrix");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> em(
      m.a.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(em);
  const Eigen::VectorXd sv = svd.singularValues();
  singular_values.assign(sv.data(), sv.data() + sv.size());
  const double smax = singular_values.empty() ? 0.0 : singular_values.front();
  int rank = 0;
  for (double s : singular_values)
    if (s > tol_rel * smax && smax > 0.0) ++rank;
  return rank;
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw ConfigError("matmul: inner dimension mismatch");
  using RM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RM> ea(a.a.data(), static_cast<Eigen::Index>(a.rows),
                          static_cast<Eigen::Index>(a.cols));
  Eigen::Map<const RM> eb(b.a.data(), static_cast<Eigen::Index>(b.rows),
                          static_cast<Eigen::Index>(b.cols));
  Mat c(a.rows, b.cols);
  Eigen::Map<RM> ec(c.a.data(), static_cast<Eigen::Index>(c.rows),
                    static_cast<Eigen::Index>(c.cols));
  ec.noalias() = ea * eb;
  return c;
}

KsField make_ks_field(std::size_t n, double L_domain, std::vector<std::size_t> p_idx) {
  if (!is_pow2(n)) throw ConfigError("make_ks_field: n must be a power of two");
  KsField f;
  f.n = n;
  f.L_domain = L_domain;
  f.p = std::move(p_idx);
  f.A = Mat(n, n);
  f.B = Mat(n, n);

  // Column j of a spectral operator is ifft(symbol .* fft(e_j)).
  const long half = static_cast<long>(n) / 2;
  std::vector<cxd> lam(n), ik(n);
  for (std::size_t k = 0; k < n; ++k) {
    const long sk = (static_cast<long>(k) <= half) ? static_cast<long>(k)
                                                   : static_cast<long>(k) - static_cast<long>(n);
    const double kt = 2.0 * M_PI * static_cast<double>(sk) / L_domain;
    lam[k] = cxd(kt * kt - kt * kt * kt * kt, 0.0);  // -(d^4 + d^2) symbol
    ik[k] = (std::abs(sk) == half) ? cxd(0.0, 0.0) : cxd(0.0, kt);
  }
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<cxd> e(n, cxd(0.0, 0.0));
    e[j] = cxd(1.0, 0.0);
    fft(e);
    std::vector<cxd> ca(e), cb(e);
    for (std::size_t k = 0; k < n; ++k) {
      ca[k] *= lam[k];
      cb[k] *= ik[k];
    }
    ifft(ca);
    ifft(cb);
    for (std::size_t i = 0; i < n; ++i) {
      f.A(i, j) = ca[i].real();
      f.B(i, j) = cb[i].real();
    }
  }
  return f;
}

std::string RankReport::to_json() const {
  nlohmann::json j;
  j["n"] = n;
  j["rank"] = rank;
  j["satisfied"] = satisfied;
  j["tolerance"] = tolerance;
  j["singular_values"] = singular_values;
  j["point"] = point;
  const auto mat_to_json = [](const Mat& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < m.rows; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t k = 0; k < m.cols; ++k) row.push_back(m(i, k));
      rows.push_back(row);
    }
    return rows;
  };
  j["L"] = mat_to_json(L);
  j["jacobian"] = mat_to_json(jacobian);
  return j.dump(2);
}

}  // namespace obsflow::obs
