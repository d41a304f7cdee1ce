#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "beamforge/dedisp.hpp"

namespace beamforge {

/// One-sided power spectrum; `powers[i]` is Fourier bin k = i + 1 (DC excluded).
struct PowerSpectrum {
  std::vector<double> powers;
  double freq_resolution_hz = 0.0;
  double dm = 0.0;
  std::size_t n_fft = 0;

  double frequency_hz(std::size_t index) const {
    return static_cast<double>(index + 1) * freq_resolution_hz;
  }
};

struct Birdie {
  double center_hz = 0.0;
  double half_width_hz = 0.0;
};

using BirdieList = std::vector<Birdie>;

struct Candidate {
  double period_ms = 0.0;
  double freq_hz = 0.0;
  double dm = 0.0;
  double snr = 0.0;
  std::size_t fourier_bin = 0;
  std::size_t dm_index = 0;
};

struct SearchOptions {
  double snr_threshold = 8.0;
  std::size_t max_candidates = 50;
  // Zero-padding factor applied on top of the next power of two of the
  // series length.
  std::size_t fft_padding = 2;
  // 0 = hardware concurrency.
  unsigned threads = 0;
};

PowerSpectrum fft_power(const TimeSeries &ts, std::size_t n_fft);
PowerSpectrum apply_birdie_mask(PowerSpectrum spec, const BirdieList &birdies);
PowerSpectrum normalize_spectrum(PowerSpectrum spec);

inline constexpr std::size_t kRunningMedianWindow = 1001;

/// Gaussian-equivalent significance of a normalized power, assuming the
/// noise powers are exponentially distributed with unit mean.
double spectral_snr(double normalized_power);
/// Smallest normalized power whose spectral_snr reaches `snr`.
double power_for_snr(double snr);
/// 1.4826 * MAD.
double robust_sigma(std::span<const double> values);

/// Prepared per-beam search state: the unpacked block and an FFT plan.
/// `hunt_trial` is safe to call from several threads at once.
class SearchPlan {
public:
  SearchPlan(const FilterbankBlock &block, std::size_t fft_padding = 2);
  ~SearchPlan();
  SearchPlan(SearchPlan &&) noexcept;
  SearchPlan &operator=(SearchPlan &&) noexcept;

  std::size_t n_fft() const;
  const ObservationParams &params() const;

  /// Dedisperse, transform, mask, normalize and threshold one DM trial.
  std::vector<Candidate> hunt_trial(double dm, std::size_t dm_index, const BirdieList &birdies,
                                    double snr_threshold) const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Runs every DM trial of `grid`; per-trial hit lists come back in grid order.
std::vector<std::vector<Candidate>> hunt(const SearchPlan &plan, const DmTrialGrid &grid,
                                         const BirdieList &birdies, const SearchOptions &opts);

/// Merges hits within one Fourier bin and two DM steps of a stronger hit,
/// sorts by snr and truncates.
std::vector<Candidate> select_best(std::vector<Candidate> hits, const SearchOptions &opts);

std::vector<Candidate> search_all_dms(const FilterbankBlock &block, const DmTrialGrid &grid,
                                      const BirdieList &birdies, const SearchOptions &opts = {});

void write_candidates(const std::vector<Candidate> &cands, std::ostream &out);
std::vector<Candidate> read_candidates(std::istream &in);
BirdieList read_birdies(std::istream &in);

} // namespace beamforge
