#include "beamforge/clientloop.hpp"

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "beamforge/beamio.hpp"
#include "beamforge/error.hpp"
#include "fsutil.hpp"

namespace beamforge {

namespace fs = std::filesystem;

namespace {

using Stopwatch = std::chrono::steady_clock;

double seconds_since(Stopwatch::time_point t0) {
  return std::chrono::duration<double>(Stopwatch::now() - t0).count();
}

std::int64_t wall_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

template <typename Fn> auto in_stage(const char *stage, Fn &&fn) {
  try {
    return fn();
  } catch (const Error &e) {
    throw Error(e.code(), std::string(stage) + ": " + e.message());
  }
}

DmTrialGrid trial_grid(const ClientConfig &cfg) {
  if (cfg.n_trials == 1) {
    DmTrialGrid g;
    g.dm_min = g.dm_max = cfg.dm_min;
    g.dm_values = {cfg.dm_min};
    return g;
  }
  return make_dm_grid(cfg.n_trials, cfg.dm_min, cfg.dm_max);
}

QueueOptions queue_options(const ClientConfig &cfg) {
  QueueOptions q;
  q.lock_timeout_s = cfg.lock_timeout_s;
  q.lock_stale_secs = cfg.lock_stale_secs;
  q.clock = cfg.clock;
  q.fault_hook = cfg.fault_hook;
  return q;
}

void fire(const ClientConfig &cfg, std::string_view point) {
  if (cfg.fault_hook) cfg.fault_hook(point);
}

using Progress = std::function<void(ClientPhase, std::size_t)>;

BeamResult run_stages(const fs::path &block_path, const ClientConfig &cfg, const Progress &progress) {
  BeamResult out;
  StageTiming &t = out.timing;

  progress(ClientPhase::Decimate, 0);
  fire(cfg, "stage.decimate");
  auto t0 = Stopwatch::now();
  const fs::path reduced_path = cfg.scratch_dir / (block_path.filename().string() + ".dec");
  std::string beam_id;
  in_stage("decimate", [&] {
    FilterbankBlock raw = read_block(block_path);
    beam_id = raw.params().beam_id;
    if (raw.params().bits_per_sample == 1) {
      raw = decimate(raw, cfg.chan_factor, cfg.time_factor);
    }
    write_block(raw, reduced_path);
    return 0;
  });
  t.decimate_s = seconds_since(t0);

  progress(ClientPhase::Convert, 0);
  fire(cfg, "stage.sc_td");
  t0 = Stopwatch::now();
  const FilterbankBlock block = in_stage("sc_td", [&] {
    FilterbankBlock b = convert_to_timeseries_format(read_block(reduced_path));
    std::error_code ec;
    fs::remove(reduced_path, ec);
    return b;
  });
  t.sc_td_s = seconds_since(t0);

  t0 = Stopwatch::now();
  const SearchOptions opts = cfg.search_options();
  const SearchPlan plan = in_stage("filterbank", [&] { return SearchPlan(block, opts.fft_padding); });
  t.filterbank_s = seconds_since(t0);

  progress(ClientPhase::Hunt, 0);
  fire(cfg, "stage.hunt");
  t0 = Stopwatch::now();
  const DmTrialGrid grid = trial_grid(cfg);
  auto per_trial = in_stage("hunt", [&] { return hunt(plan, grid, cfg.birdies, opts); });
  const double hunt_s = seconds_since(t0);
  progress(ClientPhase::Best, grid.n_trials());

  fire(cfg, "stage.best");
  t0 = Stopwatch::now();
  std::vector<Candidate> all;
  for (auto &trial : per_trial) {
    all.insert(all.end(), trial.begin(), trial.end());
  }
  out.candidates = select_best(std::move(all), opts);
  t.best_s = seconds_since(t0);

  out.timing = StageTiming::from_stages(beam_id.empty() ? block_path.stem().string() : beam_id, 0.0,
                                        t.decimate_s, t.sc_td_s, t.filterbank_s,
                                        hunt_s / static_cast<double>(grid.n_trials()), t.best_s,
                                        grid.n_trials());
  return out;
}

// Rewrites the status file every heartbeat interval and on every change.
class Heartbeat {
public:
  Heartbeat(const ClientConfig &cfg) : queue_(cfg.shared_dir, queue_options(cfg)), interval_(cfg.heartbeat_interval_s) {
    status_.client_id = cfg.client_id;
    write_locked();
    thread_ = std::thread([this] { loop(); });
  }
  ~Heartbeat() {
    {
      std::lock_guard lock(mutex_);
      stop_ = true;
      status_.phase = ClientPhase::Idle;
      status_.current_beam = "-";
      write_locked();
    }
    cv_.notify_all();
    thread_.join();
  }

  void set(ClientPhase phase, std::string beam, std::size_t trials) {
    std::lock_guard lock(mutex_);
    status_.phase = phase;
    status_.current_beam = std::move(beam);
    status_.trials_done = trials;
    write_locked();
  }

private:
  void loop() {
    std::unique_lock lock(mutex_);
    while (!stop_) {
      cv_.wait_for(lock, std::chrono::duration<double>(interval_));
      if (!stop_) write_locked();
    }
  }
  void write_locked() {
    status_.heartbeat = std::max(status_.heartbeat, queue_.now());
    try {
      queue_.write_status(status_);
    } catch (const Error &) {
      // A missed heartbeat is retried on the next tick.
    }
  }

  WorkQueue queue_;
  double interval_;
  ClientStatus status_;
  std::mutex mutex_;
  std::condition_variable cv_;
  bool stop_ = false;
  std::thread thread_;
};

} // namespace

// ---- timing ---------------------------------------------------------------

StageTiming StageTiming::from_stages(std::string beam_id, double download_s, double decimate_s,
                                     double sc_td_s, double filterbank_s, double hunt_trial_mean_s,
                                     double best_s, std::size_t n_trials) {
  StageTiming t;
  t.beam_id = std::move(beam_id);
  t.download_s = download_s;
  t.decimate_s = decimate_s;
  t.sc_td_s = sc_td_s;
  t.filterbank_s = filterbank_s;
  t.hunt_trial_mean_s = hunt_trial_mean_s;
  t.best_s = best_s;
  t.n_trials = n_trials;
  t.total_min = t.stage_sum_s() / 60.0;
  return t;
}

double StageTiming::stage_sum_s() const {
  return download_s + decimate_s + sc_td_s + filterbank_s + static_cast<double>(n_trials) * hunt_trial_mean_s +
         best_s;
}

bool StageTiming::identity_holds(double rel_tol) const {
  const double total_s = total_min * 60.0;
  return std::abs(total_s - stage_sum_s()) <= rel_tol * total_s;
}

std::string StageTiming::to_line() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%zu\t%.9g", download_s, decimate_s,
                sc_td_s, filterbank_s, hunt_trial_mean_s, best_s, n_trials, total_min);
  return beam_id + buf;
}

StageTiming StageTiming::parse_line(std::string_view line) {
  std::istringstream ss{std::string(line)};
  StageTiming t;
  if (!(ss >> t.beam_id >> t.download_s >> t.decimate_s >> t.sc_td_s >> t.filterbank_s >> t.hunt_trial_mean_s >>
        t.best_s >> t.n_trials >> t.total_min)) {
    throw Error(ErrorCode::ParseError, "bad timing line: " + std::string(line));
  }
  return t;
}

// ---- config ---------------------------------------------------------------

void ClientConfig::validate() const {
  if (!is_safe_client_id(client_id)) {
    throw Error(ErrorCode::InvalidParams, "client id must be non-empty and filesystem-safe");
  }
  if (shared_dir.empty() || scratch_dir.empty()) {
    throw Error(ErrorCode::InvalidParams, "shared and scratch directories are required");
  }
  if (n_trials == 0 || chan_factor == 0 || time_factor == 0 || max_candidates == 0) {
    throw Error(ErrorCode::InvalidParams, "trial count, decimation factors and candidate cap must be >= 1");
  }
  if (!(snr_threshold > 0.0) || !(dm_min >= 0.0) || (n_trials > 1 && !(dm_max > dm_min))) {
    throw Error(ErrorCode::InvalidParams, "bad threshold or DM range");
  }
  if (!(stagger_slot_s > 0.0) || !(poll_interval_s > 0.0) || !(heartbeat_interval_s > 0.0) ||
      !(lock_timeout_s > 0.0) || lock_stale_secs <= 0) {
    throw Error(ErrorCode::InvalidParams, "durations must be positive");
  }
}

SearchOptions ClientConfig::search_options() const {
  SearchOptions o;
  o.snr_threshold = snr_threshold;
  o.max_candidates = max_candidates;
  o.fft_padding = fft_padding;
  o.threads = threads;
  return o;
}

// ---- stages ----------------------------------------------------------------

DownloadResult staggered_download(const ClientConfig &cfg, std::string_view data_path) {
  WorkQueue queue(cfg.shared_dir, queue_options(cfg));
  const fs::path source = fs::path(data_path).is_absolute() ? fs::path(data_path) : cfg.shared_dir / data_path;
  if (!fs::is_regular_file(source)) {
    throw Error(ErrorCode::IoError, "missing data file " + source.string());
  }
  DownloadResult out;
  out.local_path = cfg.scratch_dir / (cfg.client_id + "_" + source.filename().string());

  LockFileOptions lopts;
  lopts.timeout_s = 10.0 * cfg.stagger_slot_s;
  lopts.stale_secs = cfg.lock_stale_secs;
  lopts.poll_s = 0.01;
  lopts.clock = cfg.clock;
  std::optional<LockFile> slot;
  try {
    slot.emplace(LockFile::acquire(cfg.shared_dir / "download.slot", cfg.client_id, lopts));
  } catch (const Error &e) {
    if (e.code() != ErrorCode::LockTimeout) throw;
    out.slot_timed_out = true;
    queue.append_log(cfg.client_id, std::string(error_name(ErrorCode::SlotTimeout)) +
                                        ": no download slot after " + std::to_string(lopts.timeout_s) +
                                        " s, copying anyway");
  }
  fire(cfg, "download.copy");
  const std::int64_t start_us = wall_us();
  const auto t0 = Stopwatch::now();
  std::error_code ec;
  fs::copy_file(source, out.local_path, fs::copy_options::overwrite_existing, ec);
  out.seconds = seconds_since(t0);
  const std::int64_t end_us = wall_us();
  if (slot) slot->release();
  if (ec) {
    throw Error(ErrorCode::IoError, "copy " + source.string() + ": " + ec.message());
  }
  detail::append_to_file(cfg.shared_dir / "downloads.log",
                         cfg.client_id + " " + source.filename().string() + " " + std::to_string(start_us) +
                             " " + std::to_string(end_us) + (out.slot_timed_out ? " unslotted\n" : "\n"));
  return out;
}

BeamResult process_beam(const fs::path &block_path, const ClientConfig &cfg) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(cfg.scratch_dir, ec);
  return run_stages(block_path, cfg, [](ClientPhase, std::size_t) {});
}

ClientSummary run_client(const ClientConfig &cfg) {
  cfg.validate();
  if (!fs::is_directory(cfg.shared_dir) || !fs::exists(cfg.shared_dir / "beams.db")) {
    throw Error(ErrorCode::FatalConfig, "no queue database under " + cfg.shared_dir.string());
  }
  std::error_code ec;
  fs::create_directories(cfg.scratch_dir, ec);
  if (!fs::is_directory(cfg.scratch_dir)) {
    throw Error(ErrorCode::FatalConfig, "cannot create scratch directory " + cfg.scratch_dir.string());
  }

  WorkQueue queue(cfg.shared_dir, queue_options(cfg));
  ClientSummary summary;
  Heartbeat heartbeat(cfg);
  queue.append_log(cfg.client_id, "client started");

  for (;;) {
    Command cmd = Command::Run;
    try {
      cmd = queue.read_control(cfg.client_id);
    } catch (const Error &e) {
      queue.append_log(cfg.client_id, std::string("ignoring control file: ") + e.what());
    }
    if (cmd == Command::Stop) {
      summary.reason = ExitReason::Stop;
      break;
    }
    if (cmd == Command::Pause) {
      heartbeat.set(ClientPhase::Idle, "-", 0);
      std::this_thread::sleep_for(std::chrono::duration<double>(cfg.poll_interval_s));
      continue;
    }

    BeamRecord rec;
    try {
      rec = queue.claim_next(cfg.client_id);
    } catch (const Error &e) {
      if (e.code() == ErrorCode::NoWork) {
        summary.reason = ExitReason::NoWork;
        break;
      }
      if (e.code() != ErrorCode::LockTimeout && e.code() != ErrorCode::LockStolen) throw;
      queue.append_log(cfg.client_id, std::string("claim retry: ") + e.what());
      continue;
    }
    queue.append_log(cfg.client_id, "claimed " + rec.beam_id + " attempt " + std::to_string(rec.attempts));
    fire(cfg, "beam.claimed");

    const Progress progress = [&](ClientPhase phase, std::size_t trials) {
      heartbeat.set(phase, rec.beam_id, trials);
    };
    std::optional<BeamResult> result;
    fs::path local;
    try {
      progress(ClientPhase::Download, 0);
      const DownloadResult dl = in_stage("download", [&] { return staggered_download(cfg, rec.data_path); });
      local = dl.local_path;
      result = run_stages(local, cfg, progress);
      StageTiming &t = result->timing;
      t = StageTiming::from_stages(rec.beam_id, dl.seconds, t.decimate_s, t.sc_td_s, t.filterbank_s,
                                   t.hunt_trial_mean_s, t.best_s, t.n_trials);
    } catch (const Error &e) {
      queue.append_log(cfg.client_id, rec.beam_id + " failed: " + e.what());
      result.reset();
      try {
        queue.mark_failed(cfg.client_id, rec.beam_id, error_name(e.code()));
        ++summary.beams_failed;
      } catch (const Error &e2) {
        queue.append_log(cfg.client_id, std::string("could not mark failed: ") + e2.what());
      }
    }
    if (!local.empty()) fs::remove(local, ec);

    if (result) {
      try {
        progress(ClientPhase::Upload, result->timing.n_trials);
        fire(cfg, "stage.upload");
        std::ostringstream cand;
        write_candidates(result->candidates, cand);
        const std::string rel = "results/" + rec.beam_id + ".cand";
        fs::create_directories(queue.results_dir(), ec);
        detail::write_file_atomic(cfg.shared_dir / rel, cand.str());
        queue.append_timing(cfg.client_id, result->timing.to_line());
        queue.mark_done(cfg.client_id, rec.beam_id, rel);
        ++summary.beams_done;
        queue.append_log(cfg.client_id, "done " + rec.beam_id);
      } catch (const Error &e) {
        // Usually the claim was requeued from under us; the beam will be redone.
        queue.append_log(cfg.client_id, rec.beam_id + " not completed: " + e.what());
      }
    }
    heartbeat.set(ClientPhase::Idle, "-", 0);
  }
  queue.append_log(cfg.client_id, summary.reason == ExitReason::Stop ? "stopped" : "no work left");
  return summary;
}

} // namespace beamforge
