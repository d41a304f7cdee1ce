#include "beamforge/dedisp.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "beamforge/error.hpp"

namespace beamforge {

double dm_delay(double dm, double f_chan_mhz, double f_ref_mhz) {
  if (!(f_chan_mhz > 0.0) || !(f_ref_mhz > 0.0)) {
    throw Error(ErrorCode::NonPositiveFrequency, "frequencies must be positive");
  }
  if (!(dm >= 0.0)) {
    throw Error(ErrorCode::InvalidParams, "dm must be >= 0");
  }
  return kDispersionConstant * dm * (1.0 / (f_chan_mhz * f_chan_mhz) - 1.0 / (f_ref_mhz * f_ref_mhz));
}

DmTrialGrid make_dm_grid(std::size_t n_trials, double dm_min, double dm_max) {
  if (n_trials < 2 || !(dm_max > dm_min) || !(dm_min >= 0.0)) {
    throw Error(ErrorCode::BadRange, "need n_trials >= 2 and 0 <= dm_min < dm_max");
  }
  DmTrialGrid grid;
  grid.dm_min = dm_min;
  grid.dm_max = dm_max;
  grid.dm_values.resize(n_trials);
  const double step = (dm_max - dm_min) / static_cast<double>(n_trials - 1);
  for (std::size_t i = 0; i < n_trials; ++i) {
    grid.dm_values[i] = dm_min + step * static_cast<double>(i);
  }
  grid.dm_values.back() = dm_max;
  return grid;
}

std::vector<std::uint64_t> channel_shifts(const ObservationParams &params, double dm) {
  std::vector<std::uint64_t> shifts(params.n_channels);
  const double tsamp_s = params.t_samp_ms * 1e-3;
  for (std::uint32_t c = 0; c < params.n_channels; ++c) {
    const double delay = dm_delay(dm, params.channel_freq_mhz(c), params.f_top_mhz);
    shifts[c] = static_cast<std::uint64_t>(std::llround(delay / tsamp_s));
  }
  return shifts;
}

Dedisperser::Dedisperser(const FilterbankBlock &block) : params_(block.params()) {
  const std::size_t nch = params_.n_channels;
  const std::size_t ns = params_.n_samples;
  planes_.resize(nch * ns);
  const auto data = block.payload();
  const std::size_t bps = params_.bytes_per_slice();
  if (params_.bits_per_sample == 8) {
    for (std::size_t s = 0; s < ns; ++s) {
      const std::uint8_t *slice = data.data() + s * bps;
      for (std::size_t c = 0; c < nch; ++c) {
        planes_[c * ns + s] = slice[c];
      }
    }
  } else {
    for (std::size_t s = 0; s < ns; ++s) {
      const std::uint8_t *slice = data.data() + s * bps;
      for (std::size_t c = 0; c < nch; ++c) {
        planes_[c * ns + s] = (slice[c / 8] >> (7 - c % 8)) & 1u;
      }
    }
  }
}

TimeSeries Dedisperser::dedisperse(double dm) const {
  const auto shifts = channel_shifts(params_, dm);
  const std::uint64_t max_shift = *std::max_element(shifts.begin(), shifts.end());
  const std::size_t ns = params_.n_samples;
  if (max_shift >= ns) {
    throw Error(ErrorCode::ShiftExceedsData, "dispersion sweep of " + std::to_string(max_shift) +
                                                 " samples exceeds block of " + std::to_string(ns));
  }
  const std::size_t n_out = ns - max_shift;
  std::vector<std::uint32_t> acc(n_out, 0);
  for (std::size_t c = 0; c < params_.n_channels; ++c) {
    const std::uint8_t *row = planes_.data() + c * ns + shifts[c];
    for (std::size_t s = 0; s < n_out; ++s) {
      acc[s] += row[s];
    }
  }
  TimeSeries ts;
  ts.t_samp_ms = params_.t_samp_ms;
  ts.dm = dm;
  ts.values.assign(acc.begin(), acc.end());
  return ts;
}

TimeSeries dedisperse(const FilterbankBlock &block, double dm) {
  return Dedisperser(block).dedisperse(dm);
}

void write_timeseries_u32(const TimeSeries &ts, std::ostream &out) {
  auto put = [&out](std::uint64_t v, std::size_t bytes) {
    for (std::size_t i = 0; i < bytes; ++i) {
      out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
  };
  put(ts.values.size(), 8);
  for (double v : ts.values) {
    put(static_cast<std::uint32_t>(std::llround(std::max(v, 0.0))), 4);
  }
  if (!out) {
    throw Error(ErrorCode::IoError, "time series write failed");
  }
}

} // namespace beamforge
