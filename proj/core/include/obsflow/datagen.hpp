#pragma once

#include <cstdint>
#include <vector>

#include "obsflow/io.hpp"

namespace obsflow::data {

/// Draws `count` initial conditions from the per-system nu_0:
///   L63: U[-15,15] x U[-15,15] x U[0,40]
///   L96: F + U[-1,1] per component
///   KS : random band-limited field, modes 1..8 with iid standard normal
///        coefficients, rescaled to unit mean-square norm
/// Point j uses RNG stream stream_base + j, so draws are reproducible and
/// independent of batching.
std::vector<std::vector<double>> sample_nu0(const dynsys::SystemSpec& system,
                                            std::uint64_t seed, long count,
                                            std::uint64_t stream_base = 0);

/// Advances each point by flow(duration). KS uses a 0.25 scheme step, the
/// others the RK4 integrator's internal step. duration = 0 is the identity.
std::vector<std::vector<double>> burn_in(const dynsys::SystemSpec& system,
                                         const std::vector<std::vector<double>>& points,
                                         double duration);

/// Zeroes every Fourier mode with min(k, N-k) >= k_keep; k_keep = N/2 keeps
/// everything including the Nyquist mode. N must be a power of two and
/// 1 <= k_keep <= N/2. The result is real to roundoff by construction.
std::vector<double> spectral_filter(const std::vector<double>& field, int k_keep);

/// Simulates burn-in then [0, output_t1] per sample and slices the windows.
/// Inputs are the observed projection (band-limited when filter_modes is set);
/// outputs are the unobserved projection for smoothing and the observed one
/// for forecasting. Samples that blow up are redrawn on a fresh stream; the
/// retry total is recorded on the dataset. Bit-identical for any `threads`.
Dataset generate(const TaskSpec& task, long count, std::uint64_t seed,
                 Split split = Split::Train, int threads = 0);

/// Re-integrates the trajectory behind one stored sample stream out to
/// `steps` grid points (t = 0 .. (steps-1)*dt) and returns the observed
/// projection, the same view the dataset's input windows use, for every
/// point. The shared prefix is bit-identical to the original generation;
/// blow-up past the original horizon raises IntegrationError.
Mat regenerate_observed(const TaskSpec& task, std::uint64_t base_seed, std::uint64_t stream,
                        long steps);

/// Task presets. Index sets are 0-based.
TaskSpec l63_smoothing();
TaskSpec l63_smoothing_z_to_xy();
TaskSpec l63_forecasting();
TaskSpec l96_smoothing();
TaskSpec l96_forecasting();
TaskSpec ks_smoothing();
TaskSpec ks_forecasting();

}  // namespace obsflow::data
