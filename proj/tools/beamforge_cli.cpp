// beamforge: command-line front end for every library module.

#include <CLI11.hpp>
#include <csignal>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include "beamforge/archive.hpp"
#include "beamforge/beamio.hpp"
#include "beamforge/clientloop.hpp"
#include "beamforge/clustersim.hpp"
#include "beamforge/config.hpp"
#include "beamforge/dedisp.hpp"
#include "beamforge/error.hpp"
#include "beamforge/periodsearch.hpp"
#include "beamforge/sensitivity.hpp"
#include "beamforge/workqueue.hpp"

namespace fs = std::filesystem;
using namespace beamforge;

namespace {

// ---- shared helpers ----------------------------------------------------------

FilterbankBlock read_input(const std::string &path) {
  if (path == "-") return read_block(std::cin);
  return read_block(fs::path(path));
}

void write_output(const std::string &path, const std::function<void(std::ostream &)> &fn) {
  if (path == "-") {
    fn(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  fn(out);
  if (!out) throw Error(ErrorCode::IoError, "write to " + path + " failed");
}

// "100ms:60:0.05[:amp]"; the period may also be given in seconds ("0.1s").
PulsarSpec parse_pulsar(const std::string &text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.size() < 3 || parts.size() > 4) {
    throw CLI::ValidationError("--pulsar", "expected PERIOD:DM:DUTY[:AMPLITUDE], got '" + text + "'");
  }
  PulsarSpec p;
  try {
    std::string period = parts[0];
    double scale = 1.0;
    if (period.size() > 2 && period.ends_with("ms")) {
      period.resize(period.size() - 2);
    } else if (period.size() > 1 && period.back() == 's') {
      period.pop_back();
      scale = 1000.0;
    }
    p.period_ms = std::stod(period) * scale;
    p.dm = std::stod(parts[1]);
    p.duty_cycle = std::stod(parts[2]);
    if (parts.size() == 4) p.amplitude = std::stod(parts[3]);
  } catch (const std::logic_error &) {
    throw CLI::ValidationError("--pulsar", "bad number in '" + text + "'");
  }
  return p;
}

struct SynthOptions {
  ObservationParams obs;
  std::uint64_t seed = 1;
  std::string pulsar;

  void add_to(CLI::App *app, bool prefixed) {
    const std::string pre = prefixed ? "--synth-" : "--";
    app->add_option(pre + "channels", obs.n_channels, "number of frequency channels")->check(CLI::PositiveNumber);
    app->add_option(pre + "chan-bw", obs.channel_bw_mhz, "channel width, MHz")->check(CLI::PositiveNumber);
    app->add_option(pre + "f-top", obs.f_top_mhz, "centre frequency of channel 0, MHz")->check(CLI::PositiveNumber);
    app->add_option(pre + "tsamp-ms", obs.t_samp_ms, "sampling time, ms")->check(CLI::PositiveNumber);
    app->add_option(pre + "samples", obs.n_samples, "number of time samples")->check(CLI::PositiveNumber);
    app->add_option(pre + "beam-id", obs.beam_id, "beam identifier stored in the header");
    app->add_option(pre + "ra", obs.ra_deg, "beam RA, degrees")->check(CLI::Range(0.0, 360.0));
    app->add_option(pre + "dec", obs.dec_deg, "beam Dec, degrees")->check(CLI::Range(-90.0, 90.0));
    app->add_option(pre + "seed", seed, "noise seed");
    app->add_option(pre + "pulsar", pulsar, "inject PERIOD:DM:DUTY[:AMPLITUDE], e.g. 100ms:60:0.05");
  }

  FilterbankBlock make() const {
    std::optional<PulsarSpec> p;
    if (!pulsar.empty()) p = parse_pulsar(pulsar);
    ObservationParams o = obs;
    o.bits_per_sample = 1;
    return convert_to_timeseries_format(synthesize_beam(o, p, seed));
  }
};

void apply_config_observation(const GlobalConfig &cfg, SynthOptions &s, CLI::App *app, bool prefixed) {
  const std::string pre = prefixed ? "--synth-" : "--";
  auto unset = [&](const char *name) { return app->get_option(pre + name)->count() == 0; };
  if (unset("channels")) s.obs.n_channels = cfg.observation.n_channels;
  if (unset("chan-bw")) s.obs.channel_bw_mhz = cfg.observation.channel_bw_mhz;
  if (unset("f-top")) s.obs.f_top_mhz = cfg.observation.f_top_mhz;
  if (unset("tsamp-ms")) s.obs.t_samp_ms = cfg.observation.t_samp_ms;
  if (unset("samples")) s.obs.n_samples = cfg.observation.n_samples;
}

BirdieList load_birdies(const std::string &path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open birdie file " + path);
  return read_birdies(in);
}

fs::path require_shared(const std::string &flag_value, const GlobalConfig &cfg) {
  if (!flag_value.empty()) return flag_value;
  if (!cfg.shared_dir.empty()) return cfg.shared_dir;
  throw CLI::RequiredError("--shared (or BEAMFORGE_SHARED, or shared_dir in --config)");
}

std::vector<double> parse_list(const std::string &text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::logic_error &) {
      throw CLI::ValidationError("list", "bad number '" + item + "'");
    }
  }
  return out;
}

// Kill injection for recovery testing: each claimed beam is doomed with
// probability `rate`, and the process SIGKILLs itself at a random later
// protocol point.
FaultHook make_kill_hook(double rate, std::uint64_t seed) {
  if (!(rate > 0.0)) return {};
  static const std::vector<std::string> points = {"stage.decimate", "stage.hunt",     "stage.upload",
                                                  "download.copy",  "lock.acquired",  "db.written",
                                                  "journal.appended", "db.renamed"};
  auto rng = std::make_shared<std::mt19937_64>(seed ^ static_cast<std::uint64_t>(::getpid()));
  auto target = std::make_shared<std::string>();
  return [rate, rng, target](std::string_view point) {
    if (point == "beam.claimed") {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      *target = u(*rng) < rate ? points[(*rng)() % points.size()] : std::string();
      return;
    }
    if (!target->empty() && point == *target) {
      std::raise(SIGKILL);
    }
  };
}

// Appends `A|R pid monotonic_ns` around each database lock hold so
// a test harness can check that holds never overlap.
FaultHook with_lock_audit(const std::string &path, FaultHook inner) {
  return [path, inner = std::move(inner)](std::string_view point) {
    const bool acquire = point == "lock.acquired";
    if (acquire || point == "lock.releasing") {
      timespec ts{};
      ::clock_gettime(CLOCK_MONOTONIC, &ts);
      char line[96];
      const int n = std::snprintf(line, sizeof line, "%c %ld %lld\n", acquire ? 'A' : 'R',
                                  static_cast<long>(::getpid()),
                                  static_cast<long long>(ts.tv_sec) * 1000000000LL + ts.tv_nsec);
      const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
      if (fd >= 0) {
        [[maybe_unused]] auto w = ::write(fd, line, static_cast<std::size_t>(n));
        ::close(fd);
      }
    }
    if (inner) inner(point);
  };
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"beamforge: distributed pulsar search pipeline tools"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");
  std::string config_path;
  app.add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);

  // synth
  auto *synth = app.add_subcommand("synth", "synthesize a 1-bit filterbank beam");
  SynthOptions synth_opts;
  std::string synth_out = "-";
  synth_opts.add_to(synth, false);
  synth->add_option("-o,--output", synth_out, "output block file, - for stdout");

  // decimate
  auto *decim = app.add_subcommand("decimate", "sum channel and time groups of a 1-bit block");
  std::string decim_in = "-", decim_out = "-";
  std::uint32_t chan_factor = 4, time_factor = 16;
  decim->add_option("-i,--input", decim_in, "input block, - for stdin");
  decim->add_option("-o,--output", decim_out, "output block, - for stdout");
  decim->add_option("--chan-factor", chan_factor)->check(CLI::PositiveNumber);
  decim->add_option("--time-factor", time_factor)->check(CLI::PositiveNumber);

  // dedisperse
  auto *dedis = app.add_subcommand("dedisperse", "form one dedispersed time series");
  std::string dedis_in = "-", dedis_out = "-";
  double dedis_dm = 0.0;
  bool dedis_text = false;
  dedis->add_option("-i,--input", dedis_in, "input block, - for stdin");
  dedis->add_option("-o,--output", dedis_out, "output, - for stdout");
  dedis->add_option("--dm", dedis_dm, "dispersion measure, pc cm^-3")->required()->check(CLI::NonNegativeNumber);
  dedis->add_flag("--text", dedis_text, "one value per line instead of the binary u32 dump");

  // search
  auto *search = app.add_subcommand("search", "periodicity search over a DM grid");
  std::string search_in = "-", search_out = "-", birdie_path;
  bool search_synth = false, no_decimate = false;
  SynthOptions search_synth_opts;
  std::size_t n_trials = 450;
  double dm_min = 0.0, dm_max = 700.0;
  SearchOptions sopts;
  std::uint32_t s_chan_factor = 4, s_time_factor = 16;
  search->add_option("-i,--input", search_in, "input block, - for stdin");
  search->add_option("-o,--output", search_out, "candidate file, - for stdout");
  search->add_flag("--synth", search_synth, "synthesize the input instead of reading it");
  search_synth_opts.add_to(search, true);
  search->add_flag("--no-decimate", no_decimate, "search a 1-bit block without decimating first");
  search->add_option("--chan-factor", s_chan_factor)->check(CLI::PositiveNumber);
  search->add_option("--time-factor", s_time_factor)->check(CLI::PositiveNumber);
  search->add_option("--trials", n_trials, "number of DM trials")->check(CLI::Range(2, 1000000));
  search->add_option("--dm-min", dm_min)->check(CLI::NonNegativeNumber);
  search->add_option("--dm-max", dm_max)->check(CLI::PositiveNumber);
  search->add_option("--threshold", sopts.snr_threshold, "detection threshold, sigma")->check(CLI::PositiveNumber);
  search->add_option("--max-cands", sopts.max_candidates)->check(CLI::PositiveNumber);
  search->add_option("--padding", sopts.fft_padding, "FFT zero-padding factor (power of two)")
      ->check(CLI::PositiveNumber);
  search->add_option("--threads", sopts.threads, "worker threads, 0 = all cores");
  search->add_option("--birdies", birdie_path, "file of `centre_hz half_width_hz` lines")->check(CLI::ExistingFile);

  // sensitivity
  auto *sens = app.add_subcommand("sensitivity", "minimum detectable flux density curves (CSV)");
  SensitivityParams sp;
  std::string dm_list_text = "0,20,40,60,80,100";
  double p_lo = 2.0, p_hi = 1000.0;
  std::size_t n_periods = 200;
  sens->add_option("--dms", dm_list_text, "comma-separated DM values");
  sens->add_option("--period-min", p_lo, "ms")->check(CLI::PositiveNumber);
  sens->add_option("--period-max", p_hi, "ms")->check(CLI::PositiveNumber);
  sens->add_option("--points", n_periods)->check(CLI::PositiveNumber);
  sens->add_option("--duty", sp.duty_cycle);
  sens->add_option("--snr", sp.snr_min);
  sens->add_option("--tobs", sp.t_obs_s, "s");
  sens->add_option("--bandwidth", sp.bandwidth_mhz, "MHz");
  sens->add_option("--npol", sp.n_pol);
  sens->add_option("--tsys", sp.t_sys_k, "K");
  sens->add_option("--gain", sp.gain_k_per_jy, "K/Jy");
  sens->add_option("--tsamp-ms", sp.t_samp_ms);
  sens->add_option("--chan-bw", sp.channel_bw_mhz, "MHz");
  sens->add_option("--fc", sp.f_center_mhz, "MHz");
  sens->add_option("--dm-step", sp.dm_step);

  // db-init
  auto *dbinit = app.add_subcommand("db-init", "create the beam database in a shared directory");
  std::string shared_flag, beams_file;
  std::size_t synth_beams = 0;
  SynthOptions dbinit_synth;
  dbinit->add_option("--shared", shared_flag, "shared directory");
  dbinit->add_option("--beams", beams_file, "file of `beam_id data_path` lines")->check(CLI::ExistingFile);
  dbinit->add_option("--synth", synth_beams, "write N synthetic beams under data/ and queue them");
  dbinit_synth.add_to(dbinit, true);

  // client
  auto *client = app.add_subcommand("client", "run a processing client until STOP or no work");
  ClientConfig ccfg;
  std::string scratch_flag;
  double kill_rate = 0.0;
  std::uint64_t kill_seed = 0;
  client->add_option("--id", ccfg.client_id, "client id")->required();
  client->add_option("--shared", shared_flag, "shared directory");
  client->add_option("--scratch", scratch_flag, "local scratch directory");
  client->add_option("--trials", ccfg.n_trials)->check(CLI::PositiveNumber);
  client->add_option("--dm-min", ccfg.dm_min)->check(CLI::NonNegativeNumber);
  client->add_option("--dm-max", ccfg.dm_max)->check(CLI::PositiveNumber);
  client->add_option("--threshold", ccfg.snr_threshold)->check(CLI::PositiveNumber);
  client->add_option("--max-cands", ccfg.max_candidates)->check(CLI::PositiveNumber);
  client->add_option("--chan-factor", ccfg.chan_factor)->check(CLI::PositiveNumber);
  client->add_option("--time-factor", ccfg.time_factor)->check(CLI::PositiveNumber);
  client->add_option("--padding", ccfg.fft_padding)->check(CLI::PositiveNumber);
  client->add_option("--threads", ccfg.threads);
  client->add_option("--stagger-slot", ccfg.stagger_slot_s, "s")->check(CLI::PositiveNumber);
  client->add_option("--poll", ccfg.poll_interval_s, "s")->check(CLI::PositiveNumber);
  client->add_option("--heartbeat", ccfg.heartbeat_interval_s, "s")->check(CLI::PositiveNumber);
  client->add_option("--lock-timeout", ccfg.lock_timeout_s, "s")->check(CLI::PositiveNumber);
  client->add_option("--birdies", birdie_path)->check(CLI::ExistingFile);
  client->add_option("--inject-kill-rate", kill_rate)->group("");
  client->add_option("--inject-seed", kill_seed)->group("");
  std::string audit_path;
  client->add_option("--audit-lock", audit_path)->group("");

  // monitor
  auto *monitor = app.add_subcommand("monitor", "print queue and client status");
  monitor->add_option("--shared", shared_flag, "shared directory");

  // requeue
  auto *requeue = app.add_subcommand("requeue", "return stale claims (or failed beams) to the queue");
  std::int64_t stale_secs = 600;
  bool failed = false, all_failed = false;
  std::uint32_t max_attempts = 3;
  requeue->add_option("--shared", shared_flag, "shared directory");
  requeue->add_option("--stale-secs", stale_secs, "heartbeat age that marks a claim stale")
      ->check(CLI::NonNegativeNumber);
  requeue->add_flag("--failed", failed, "requeue FAILED beams instead of stale claims");
  requeue->add_flag("--all", all_failed, "with --failed: ignore the attempt limit");
  requeue->add_option("--max-attempts", max_attempts)->check(CLI::PositiveNumber);

  // control
  auto *control = app.add_subcommand("control", "write a RUN, PAUSE or STOP control file");
  std::string command_word, control_client;
  control->add_option("command", command_word, "RUN | PAUSE | STOP")
      ->required()
      ->check(CLI::IsMember({"RUN", "PAUSE", "STOP"}));
  control->add_option("--shared", shared_flag, "shared directory");
  control->add_option("--client", control_client, "per-client override");

  // simulate
  auto *simulate_cmd = app.add_subcommand("simulate", "discrete-event cluster simulation");
  std::string profiles_path, events_path;
  std::size_t sim_beams = 3016;
  bool no_stagger = false;
  simulate_cmd->add_option("--profiles", profiles_path, "machine profile CSV (default: built-in 7 clients)")
      ->check(CLI::ExistingFile);
  simulate_cmd->add_option("--beams", sim_beams)->check(CLI::PositiveNumber);
  simulate_cmd->add_flag("--no-stagger", no_stagger, "let downloads overlap and share the link");
  simulate_cmd->add_option("--events", events_path, "write per-beam events CSV here");

  // archive-plan
  auto *archive = app.add_subcommand("archive-plan", "plan discs, write description files and the index");
  std::string pointings_path, archive_dir;
  std::uint64_t survey_seed = 2003;
  std::string media_name = "dvd";
  archive->add_option("--pointings", pointings_path, "pointing CSV (default: synthetic survey layout)")
      ->check(CLI::ExistingFile);
  archive->add_option("--seed", survey_seed, "seed for the synthetic layout");
  archive->add_option("--out", archive_dir, "directory for description files and index");
  archive->add_option("--media", media_name)->check(CLI::IsMember({"dvd", "dlt"}));

  // cost-table
  auto *cost = app.add_subcommand("cost-table", "DVD vs DLT archive cost comparison (TSV)");
  bool defaults = false;
  double data_gb = kSurveyDataGb;
  std::size_t dvd_units = kSurveyDvdCount, dlt_units = kSurveyDltCount;
  cost->add_flag("--defaults", defaults, "June 2003 media prices, ignoring --config overrides");
  cost->add_option("--data-gb", data_gb)->check(CLI::PositiveNumber);
  cost->add_option("--dvd-units", dvd_units)->check(CLI::PositiveNumber);
  cost->add_option("--dlt-units", dlt_units)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    GlobalConfig cfg = config_path.empty() ? GlobalConfig::parse("") : GlobalConfig::load(config_path);

    if (*synth) {
      apply_config_observation(cfg, synth_opts, synth, false);
      const FilterbankBlock block = synth_opts.make();
      write_output(synth_out, [&](std::ostream &o) { write_block(block, o); });
    } else if (*decim) {
      const FilterbankBlock out = decimate(read_input(decim_in), chan_factor, time_factor);
      write_output(decim_out, [&](std::ostream &o) { write_block(out, o); });
    } else if (*dedis) {
      const TimeSeries ts = dedisperse(read_input(dedis_in), dedis_dm);
      write_output(dedis_out, [&](std::ostream &o) {
        if (!dedis_text) {
          write_timeseries_u32(ts, o);
          return;
        }
        for (double v : ts.values) o << v << '\n';
      });
    } else if (*search) {
      if (search->get_option("--trials")->count() == 0) n_trials = cfg.n_trials;
      if (search->get_option("--dm-min")->count() == 0) dm_min = cfg.dm_min;
      if (search->get_option("--dm-max")->count() == 0) dm_max = cfg.dm_max;
      FilterbankBlock block;
      if (search_synth) {
        apply_config_observation(cfg, search_synth_opts, search, true);
        block = search_synth_opts.make();
      } else {
        block = read_input(search_in);
      }
      if (block.params().bits_per_sample == 1 && !no_decimate) {
        block = decimate(block, s_chan_factor, s_time_factor);
      }
      block = convert_to_timeseries_format(block);
      const auto cands =
          search_all_dms(block, make_dm_grid(n_trials, dm_min, dm_max), load_birdies(birdie_path), sopts);
      write_output(search_out, [&](std::ostream &o) { write_candidates(cands, o); });
    } else if (*sens) {
      const auto dms = parse_list(dm_list_text);
      const auto rows = sensitivity_curve(sp, dms, log_spaced(p_lo, p_hi, n_periods));
      write_sensitivity_csv(rows, std::cout);
    } else if (*dbinit) {
      const fs::path shared = require_shared(shared_flag, cfg);
      std::vector<std::pair<std::string, std::string>> beams;
      if (!beams_file.empty()) {
        std::ifstream in(beams_file);
        std::string line;
        while (std::getline(in, line)) {
          if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
          std::istringstream ss(line);
          std::string id, path;
          if (!(ss >> id)) continue;
          if (!(ss >> path)) throw Error(ErrorCode::ParseError, "beam line without a data path: " + line);
          beams.emplace_back(id, path);
        }
      }
      if (synth_beams > 0) {
        apply_config_observation(cfg, dbinit_synth, dbinit, true);
        fs::create_directories(shared / "data");
        for (std::size_t i = 0; i < synth_beams; ++i) {
          char id[32];
          std::snprintf(id, sizeof id, "beam%05zu", i);
          SynthOptions one = dbinit_synth;
          one.obs.beam_id = id;
          one.seed = dbinit_synth.seed + i;
          const std::string rel = std::string("data/") + id + ".fil";
          write_block(one.make(), shared / rel);
          beams.emplace_back(id, rel);
        }
      }
      WorkQueue q(shared);
      const QueueDatabase db = q.init(beams);
      std::cout << "initialized " << db.records.size() << " beams in " << shared.string() << '\n';
    } else if (*client) {
      ccfg.shared_dir = require_shared(shared_flag, cfg);
      ccfg.scratch_dir = !scratch_flag.empty()          ? fs::path(scratch_flag)
                         : !cfg.scratch_dir.empty()     ? cfg.scratch_dir
                                                        : fs::temp_directory_path() / ("beamforge-" + ccfg.client_id);
      if (client->get_option("--trials")->count() == 0) ccfg.n_trials = cfg.n_trials;
      if (client->get_option("--dm-min")->count() == 0) ccfg.dm_min = cfg.dm_min;
      if (client->get_option("--dm-max")->count() == 0) ccfg.dm_max = cfg.dm_max;
      ccfg.birdies = load_birdies(birdie_path);
      ccfg.fault_hook = make_kill_hook(kill_rate, kill_seed);
      if (!audit_path.empty()) ccfg.fault_hook = with_lock_audit(audit_path, std::move(ccfg.fault_hook));
      const ClientSummary s = run_client(ccfg);
      std::cout << ccfg.client_id << ": " << s.beams_done << " done, " << s.beams_failed << " failed, "
                << (s.reason == ExitReason::Stop ? "stopped" : "no work left") << '\n';
    } else if (*monitor) {
      std::cout << format_snapshot(WorkQueue(require_shared(shared_flag, cfg)).snapshot());
    } else if (*requeue) {
      WorkQueue q(require_shared(shared_flag, cfg));
      const std::size_t n = failed ? q.requeue_failed(max_attempts, all_failed) : q.requeue_stale(stale_secs);
      std::cout << "requeued " << n << '\n';
    } else if (*control) {
      WorkQueue q(require_shared(shared_flag, cfg));
      q.write_control(parse_command(command_word),
                      control_client.empty() ? std::nullopt : std::optional<std::string>(control_client));
    } else if (*simulate_cmd) {
      std::vector<MachineProfile> profiles = table1_profiles();
      if (!profiles_path.empty()) {
        std::ifstream in(profiles_path);
        profiles = read_profiles_csv(in);
      }
      const SimResult r = simulate(profiles, sim_beams, !no_stagger);
      write_summary(r, profiles, std::cout);
      if (!events_path.empty()) {
        write_output(events_path, [&](std::ostream &o) { write_events_csv(r, o); });
      }
    } else if (*archive) {
      std::vector<PointingMeta> pointings;
      if (pointings_path.empty()) {
        pointings = synthetic_survey_pointings(survey_seed);
      } else {
        std::ifstream in(pointings_path);
        pointings = read_pointings_csv(in);
      }
      const MediaSpec &media = media_name == "dvd" ? cfg.dvd : cfg.dlt;
      const auto discs = plan_discs(pointings, media);
      if (!archive_dir.empty()) {
        const fs::path dir(archive_dir);
        fs::create_directories(dir / "discs");
        for (const auto &d : discs) {
          write_output((dir / "discs" / (d.disc_id + ".txt")).string(),
                       [&](std::ostream &o) { o << write_description(d.pointing, d); });
        }
        write_output((dir / "index.csv").string(), [&](std::ostream &o) { o << build_index_csv(discs); });
        write_output((dir / "index.html").string(), [&](std::ostream &o) { o << build_index_html(discs); });
      }
      std::uint64_t bytes = 0;
      std::size_t n_beams = 0;
      for (const auto &d : discs) {
        bytes += d.bytes_used;
        n_beams += d.pointing.beams.size();
      }
      std::cout << "discs\t" << discs.size() << "\nbeams\t" << n_beams << "\nbytes\t" << bytes << "\nmean_fill\t"
                << (discs.empty() ? 0.0 : static_cast<double>(bytes) / static_cast<double>(discs.size()) /
                                              static_cast<double>(media.capacity_bytes()))
                << '\n';
    } else if (*cost) {
      const MediaSpec dvd = defaults ? dvd_june2003() : cfg.dvd;
      const MediaSpec dlt = defaults ? dlt_iv_june2003() : cfg.dlt;
      std::cout << render_cost_table(cost_report(data_gb, dvd_units, dvd), cost_report(data_gb, dlt_units, dlt));
    }
  } catch (const CLI::Error &e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const Error &e) {
    std::cerr << "beamforge: " << e.what() << '\n';
    return 1;
  } catch (const std::exception &e) {
    std::cerr << "beamforge: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
