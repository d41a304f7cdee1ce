#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "beamforge/beamio.hpp"

namespace beamforge {

/// Cold-plasma dispersion constant, MHz^2 pc^-1 cm^3 s.
inline constexpr double kDispersionConstant = 4.148808e3;

/// Arrival delay (seconds) of frequency `f_chan_mhz` relative to `f_ref_mhz`.
double dm_delay(double dm, double f_chan_mhz, double f_ref_mhz);

struct DmTrialGrid {
  std::vector<double> dm_values;
  double dm_min = 0.0;
  double dm_max = 0.0;

  std::size_t n_trials() const { return dm_values.size(); }
  bool empty() const { return dm_values.empty(); }
  double step() const {
    return dm_values.size() < 2 ? 0.0 : (dm_max - dm_min) / static_cast<double>(dm_values.size() - 1);
  }
};

DmTrialGrid make_dm_grid(std::size_t n_trials = 450, double dm_min = 0.0, double dm_max = 700.0);

struct TimeSeries {
  std::vector<double> values;
  double t_samp_ms = 1.0;
  double dm = 0.0;

  std::size_t size() const { return values.size(); }
};

/// Per-channel integer sample shifts for `dm`, referenced to channel 0.
std::vector<std::uint64_t> channel_shifts(const ObservationParams &params, double dm);

/// Unpacks a block once into channel-major planes so that many DM trials
/// can be formed without re-reading the packed payload. Read-only after
/// construction; `dedisperse` may be called concurrently.
class Dedisperser {
public:
  explicit Dedisperser(const FilterbankBlock &block);

  const ObservationParams &params() const { return params_; }
  TimeSeries dedisperse(double dm) const;

private:
  ObservationParams params_;
  std::vector<std::uint8_t> planes_;
};

TimeSeries dedisperse(const FilterbankBlock &block, double dm);

/// Debug dump: u64 count followed by little-endian u32 sums.
void write_timeseries_u32(const TimeSeries &ts, std::ostream &out);

} // namespace beamforge
