#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "beamforge/periodsearch.hpp"
#include "beamforge/workqueue.hpp"

namespace beamforge {

/// Wall-clock seconds spent in each stage of one beam.
struct StageTiming {
  std::string beam_id;
  double download_s = 0.0;
  double decimate_s = 0.0;
  double sc_td_s = 0.0;
  double filterbank_s = 0.0;
  double hunt_trial_mean_s = 0.0;
  double best_s = 0.0;
  std::size_t n_trials = 0;
  double total_min = 0.0;

  static StageTiming from_stages(std::string beam_id, double download_s, double decimate_s,
                                 double sc_td_s, double filterbank_s, double hunt_trial_mean_s,
                                 double best_s, std::size_t n_trials);

  double stage_sum_s() const;
  /// |total_min*60 - stage sum| <= rel_tol * total.
  bool identity_holds(double rel_tol = 0.01) const;

  std::string to_line() const;
  static StageTiming parse_line(std::string_view line);
};

struct ClientConfig {
  std::string client_id;
  std::filesystem::path shared_dir;
  std::filesystem::path scratch_dir;

  std::size_t n_trials = 450;
  double dm_min = 0.0;
  double dm_max = 700.0;
  std::uint32_t chan_factor = 4;
  std::uint32_t time_factor = 16;
  double snr_threshold = 8.0;
  std::size_t max_candidates = 50;
  std::size_t fft_padding = 2;
  unsigned threads = 0;
  BirdieList birdies;

  double stagger_slot_s = 60.0;
  double poll_interval_s = 1.0;
  double heartbeat_interval_s = 10.0;
  double lock_timeout_s = 30.0;
  std::int64_t lock_stale_secs = 300;
  Clock clock;
  FaultHook fault_hook;

  void validate() const;
  SearchOptions search_options() const;
};

enum class ExitReason { Stop, NoWork };

struct ClientSummary {
  std::size_t beams_done = 0;
  std::size_t beams_failed = 0;
  ExitReason reason = ExitReason::NoWork;
};

struct DownloadResult {
  std::filesystem::path local_path;
  double seconds = 0.0;
  bool slot_timed_out = false;
};

struct BeamResult {
  std::vector<Candidate> candidates;
  StageTiming timing;
};

ClientSummary run_client(const ClientConfig &cfg);

/// Copies `data_path` (relative to the shared directory) into scratch while
/// holding the single `download.slot`, so no two clients copy at once.
DownloadResult staggered_download(const ClientConfig &cfg, std::string_view data_path);

BeamResult process_beam(const std::filesystem::path &block_path, const ClientConfig &cfg);

} // namespace beamforge
