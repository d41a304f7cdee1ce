#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace beamforge {

struct MachineProfile {
  std::string name;
  double download_s = 0.0;
  double decimate_s = 0.0;
  double sc_td_s = 0.0;
  double filterbank_s = 0.0;
  double hunt_trial_s = 0.0;
  double best_s = 0.0;
  std::size_t n_trials = 450;

  void validate() const;
  double compute_s() const;
  double total_s() const { return download_s + compute_s(); }
  double total_min() const { return total_s() / 60.0; }
};

/// The seven client columns of the 2003 cluster timing table.
std::vector<MachineProfile> table1_profiles();
/// Totals (minutes) as printed in that table.
std::vector<double> table1_reported_totals_min();

std::vector<MachineProfile> read_profiles_csv(std::istream &in);
void write_profiles_csv(const std::vector<MachineProfile> &profiles, std::ostream &out);

struct SimEvent {
  std::size_t beam = 0;
  std::size_t machine = 0;
  double claim_s = 0.0;
  double download_start_s = 0.0;
  double download_end_s = 0.0;
  double done_s = 0.0;
};

struct SimResult {
  double makespan_s = 0.0;
  std::vector<std::size_t> beams_per_machine;
  std::vector<double> last_completion_s;
  double link_busy_fraction = 0.0;
  std::size_t download_overlaps = 0;
  std::vector<SimEvent> events;

  std::size_t total_beams() const;
  /// Sum over machines of beams completed / time of its last completion.
  double aggregate_rate_per_min() const;
  double makespan_rate_per_min() const;
};

/// Ideal throughput: sum of 1 / per-beam total over machines.
double rate_sum_per_min(const std::vector<MachineProfile> &profiles);

/// Event-driven run of `n_beams` through the machines. With `stagger`,
/// downloads are serialized FIFO on the link; without it they start at
/// once and share the link bandwidth equally.
SimResult simulate(const std::vector<MachineProfile> &profiles, std::size_t n_beams, bool stagger);

double parallel_efficiency(const SimResult &result, const std::vector<MachineProfile> &profiles);

double download_fraction(const MachineProfile &profile);

/// Smallest machine count N with N * (beam_mb / link) >= per-beam compute time.
std::size_t saturation_point(const MachineProfile &profile, double link_mb_per_s, double beam_mb);

void write_events_csv(const SimResult &result, std::ostream &out);
void write_summary(const SimResult &result, const std::vector<MachineProfile> &profiles,
                   std::ostream &out);

} // namespace beamforge
