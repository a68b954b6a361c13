#pragma once

#include <complex>
#include <vector>

namespace obsflow {

using cxd = std::complex<double>;

/// In-place radix-2 Cooley-Tukey. n must be a power of two.
/// Forward uses the e^{-2pi i} convention; inverse scales by 1/n.
void fft(std::vector<cxd>& x);
void ifft(std::vector<cxd>& x);

/// Real-input helpers returning the full complex spectrum of length n.
std::vector<cxd> fft_real(const std::vector<double>& x);
/// Real part of the inverse transform (input assumed Hermitian up to noise).
std::vector<double> ifft_real(const std::vector<cxd>& x);

bool is_pow2(std::size_t n);

}  // namespace obsflow
