#include "beamforge/sensitivity.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "beamforge/dedisp.hpp"
#include "beamforge/error.hpp"

namespace beamforge {

void SensitivityParams::validate() const {
  const bool positive = duty_cycle > 0.0 && snr_min > 0.0 && t_obs_s > 0.0 && bandwidth_mhz > 0.0 &&
                        n_pol > 0.0 && t_sys_k > 0.0 && gain_k_per_jy > 0.0 && f_center_mhz > 0.0;
  // Smearing terms may be switched off individually.
  const bool non_negative = t_samp_ms >= 0.0 && channel_bw_mhz >= 0.0 && dm_step >= 0.0;
  if (!positive || !non_negative || !(duty_cycle < 1.0)) {
    throw Error(ErrorCode::InvalidParams, "sensitivity parameters out of range");
  }
  if (f_center_mhz - 0.5 * bandwidth_mhz <= 0.0 || f_center_mhz - 0.5 * channel_bw_mhz <= 0.0) {
    throw Error(ErrorCode::NonPositiveFrequency, "band extends below 0 MHz");
  }
}

double effective_width_ms(const SensitivityParams &p, double period_ms, double dm) {
  if (!(period_ms > 0.0)) {
    throw Error(ErrorCode::NonPositivePeriod, "period must be > 0");
  }
  p.validate();
  const double w_int = p.duty_cycle * period_ms;
  const double half_band = 0.5 * p.bandwidth_mhz;
  const double t_dm =
      1e3 * dm_delay(0.5 * p.dm_step, p.f_center_mhz - half_band, p.f_center_mhz + half_band);
  const double half_chan = 0.5 * p.channel_bw_mhz;
  const double t_chan =
      p.channel_bw_mhz > 0.0
          ? 1e3 * dm_delay(dm, p.f_center_mhz - half_chan, p.f_center_mhz + half_chan)
          : 0.0;
  return std::sqrt(w_int * w_int + p.t_samp_ms * p.t_samp_ms + t_dm * t_dm + t_chan * t_chan);
}

double min_flux_density(const SensitivityParams &p, double period_ms, double dm) {
  const double w = effective_width_ms(p, period_ms, dm);
  if (w >= period_ms) {
    return std::numeric_limits<double>::infinity();
  }
  const double radiometer =
      p.snr_min * p.t_sys_k / (p.gain_k_per_jy * std::sqrt(p.n_pol * p.bandwidth_mhz * 1e6 * p.t_obs_s));
  return 1e3 * radiometer * std::sqrt(w / (period_ms - w));
}

std::vector<SensitivityPoint> sensitivity_curve(const SensitivityParams &p,
                                                const std::vector<double> &dm_list,
                                                const std::vector<double> &period_grid_ms) {
  if (dm_list.empty() || period_grid_ms.empty()) {
    throw Error(ErrorCode::InvalidParams, "dm and period grids must be non-empty");
  }
  std::vector<SensitivityPoint> rows;
  rows.reserve(dm_list.size() * period_grid_ms.size());
  for (double dm : dm_list) {
    for (double period : period_grid_ms) {
      rows.push_back({dm, period, min_flux_density(p, period, dm)});
    }
  }
  return rows;
}

std::vector<double> log_spaced(double lo, double hi, std::size_t n) {
  if (!(lo > 0.0) || !(hi >= lo) || n == 0) {
    throw Error(ErrorCode::BadRange, "log_spaced needs 0 < lo <= hi and n >= 1");
  }
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = lo;
    return out;
  }
  const double step = std::log(hi / lo) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = lo * std::exp(step * static_cast<double>(i));
  }
  out.back() = hi;
  return out;
}

void write_sensitivity_csv(const std::vector<SensitivityPoint> &rows, std::ostream &out) {
  out << "dm,period_ms,smin_mjy\n";
  char line[96];
  for (const auto &r : rows) {
    if (std::isinf(r.smin_mjy)) {
      std::snprintf(line, sizeof line, "%g,%.6g,inf\n", r.dm, r.period_ms);
    } else {
      std::snprintf(line, sizeof line, "%g,%.6g,%.6g\n", r.dm, r.period_ms, r.smin_mjy);
    }
    out << line;
  }
  if (!out) {
    throw Error(ErrorCode::IoError, "sensitivity csv write failed");
  }
}

} // namespace beamforge
