#include "obsflow/fft.hpp"

#include <cmath>

#include "obsflow/errors.hpp"

namespace obsflow {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

static void fft_impl(std::vector<cxd>& x, bool inverse) {
  const std::size_t n = x.size();
  if (!is_pow2(n)) throw ConfigError("fft: length must be a power of two");
  if (n == 1) return;

  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }

  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * M_PI / static_cast<double>(len);
    const cxd wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cxd w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const cxd u = x[i + k];
        const cxd v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }

  if (inverse) {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& c : x) c *= inv_n;
  }
}

void fft(std::vector<cxd>& x) { fft_impl(x, false); }
void ifft(std::vector<cxd>& x) { fft_impl(x, true); }

std::vector<cxd> fft_real(const std::vector<double>& x) {
  std::vector<cxd> c(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) c[i] = cxd(x[i], 0.0);
  fft(c);
  return c;
}

std::vector<double> ifft_real(const std::vector<cxd>& x) {
  std::vector<cxd> c = x;
  ifft(c);
  std::vector<double> r(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) r[i] = c[i].real();
  return r;
}

}  // namespace obsflow
