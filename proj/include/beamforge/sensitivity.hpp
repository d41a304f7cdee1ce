#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

namespace beamforge {

// Defaults describe the aggregated data (2 ms, 12 MHz channels over the
// 1230-1518 MHz band) and a 450-trial grid over 0-700 pc cm^-3.
struct SensitivityParams {
  double duty_cycle = 0.05;
  double snr_min = 8.0;
  double t_obs_s = 2100.0;
  double bandwidth_mhz = 288.0;
  double n_pol = 2.0;
  double t_sys_k = 21.0;
  double gain_k_per_jy = 0.735;
  double t_samp_ms = 2.0;
  double channel_bw_mhz = 12.0;
  double f_center_mhz = 1374.0;
  double dm_step = 700.0 / 449.0;

  void validate() const;
};

/// Effective pulse width (ms) after sampling, DM-grid and channel smearing.
double effective_width_ms(const SensitivityParams &p, double period_ms, double dm);

/// Minimum detectable flux density in mJy; +inf when the pulse fills the period.
double min_flux_density(const SensitivityParams &p, double period_ms, double dm);

struct SensitivityPoint {
  double dm = 0.0;
  double period_ms = 0.0;
  double smin_mjy = 0.0;
};

std::vector<SensitivityPoint> sensitivity_curve(const SensitivityParams &p,
                                                const std::vector<double> &dm_list,
                                                const std::vector<double> &period_grid_ms);

std::vector<double> log_spaced(double lo, double hi, std::size_t n);

void write_sensitivity_csv(const std::vector<SensitivityPoint> &rows, std::ostream &out);

} // namespace beamforge
