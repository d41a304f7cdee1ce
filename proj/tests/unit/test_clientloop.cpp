#include <doctest.h>

#include <algorithm>
#include <csignal>
#include <fstream>
#include <map>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "beamforge/beamio.hpp"
#include "beamforge/clientloop.hpp"
#include "beamforge/error.hpp"
#include "generators.hpp"

using namespace beamforge;
using testgen::code_of;
namespace fs = std::filesystem;

namespace {

ObservationParams small_beam(const std::string &id) {
  ObservationParams p;
  p.n_channels = 16;
  p.n_samples = std::uint64_t{1} << 15;
  p.beam_id = id;
  return p;
}

// Shared dir with n synthetic beams under data/, registered in the queue.
fs::path make_shared(const std::string &tag, std::size_t n) {
  const auto dir = testgen::scratch_dir(tag);
  fs::create_directories(dir / "data");
  std::vector<std::pair<std::string, std::string>> beams;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = "beam" + std::to_string(i);
    write_block(synthesize_beam(small_beam(id), PulsarSpec{50.0, 10.0, 0.1, 0.1}, i), dir / "data" / (id + ".fil"));
    beams.emplace_back(id, "data/" + id + ".fil");
  }
  WorkQueue(dir).init(beams);
  return dir;
}

ClientConfig config_for(const fs::path &shared, const std::string &id) {
  ClientConfig c;
  c.client_id = id;
  c.shared_dir = shared;
  c.scratch_dir = shared / ("scratch-" + id);
  c.n_trials = 8;
  c.dm_max = 20.0;
  c.poll_interval_s = 0.01;
  c.stagger_slot_s = 1.0;
  c.threads = 1;
  return c;
}

std::vector<std::string> lines_of(const fs::path &path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) {
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

int wait_for(pid_t pid) {
  int status = 0;
  ::waitpid(pid, &status, 0);
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return 128 + WTERMSIG(status);
}

std::vector<Candidate> read_cands(const fs::path &p) {
  std::ifstream in(p);
  return read_candidates(in);
}

} // namespace

TEST_SUITE("clientloop") {

TEST_CASE("one client drains three beams") {
  const auto shared = make_shared("cl-three", 3);
  const auto cfg = config_for(shared, "solo");
  const auto summary = run_client(cfg);
  CHECK(summary.beams_done == 3);
  CHECK(summary.beams_failed == 0);
  CHECK(summary.reason == ExitReason::NoWork);
  const auto db = WorkQueue(shared).read();
  CHECK(db.count(BeamStatus::Done) == 3);
  for (const auto &r : db.records) CHECK(fs::exists(shared / "results" / (r.beam_id + ".cand")));
  const auto timing = lines_of(shared / "clients" / "solo.timing");
  REQUIRE(timing.size() == 3);
  for (const auto &line : timing) {
    const auto t = StageTiming::parse_line(line);
    CHECK(t.n_trials == 8);
    CHECK(t.identity_holds());
  }
  CHECK(lines_of(shared / "downloads.log").size() == 3);
  const auto st = WorkQueue(shared).read_status("solo");
  REQUIRE(st.has_value());
  CHECK(st->phase == ClientPhase::Idle);
  fs::remove_all(shared);
}

TEST_CASE("a truncated beam is failed and the client moves on") {
  const auto shared = make_shared("cl-trunc", 2);
  const auto victim = shared / "data" / "beam0.fil";
  fs::resize_file(victim, fs::file_size(victim) - 100);
  const auto summary = run_client(config_for(shared, "c"));
  CHECK(summary.beams_failed == 1);
  CHECK(summary.beams_done == 1);
  const auto db = WorkQueue(shared).read();
  CHECK(db.find("beam0")->status == BeamStatus::Failed);
  CHECK(db.find("beam1")->status == BeamStatus::Done);
  const auto failures = lines_of(shared / "failures.log");
  REQUIRE(failures.size() == 1);
  CHECK(failures[0].ends_with("beam0 c TruncatedData"));
  fs::remove_all(shared);
}

TEST_CASE("STOP written mid-beam lets the beam finish, then exits") {
  const auto shared = make_shared("cl-stop", 3);
  auto cfg = config_for(shared, "c");
  WorkQueue q(shared);
  cfg.fault_hook = [&](std::string_view point) {
    if (point == "stage.hunt") q.write_control(Command::Stop);
  };
  const auto summary = run_client(cfg);
  CHECK(summary.reason == ExitReason::Stop);
  CHECK(summary.beams_done == 1);
  const auto db = q.read();
  CHECK(db.find("beam0")->status == BeamStatus::Done);
  CHECK(db.count(BeamStatus::Available) == 2);
  fs::remove_all(shared);
}

TEST_CASE("PAUSE idles until the control file changes") {
  const auto shared = make_shared("cl-pause", 1);
  WorkQueue q(shared);
  q.write_control(Command::Pause, "c");
  const pid_t kid = ::fork();
  REQUIRE(kid >= 0);
  if (kid == 0) {
    int rc = 1;
    try {
      rc = run_client(config_for(shared, "c")).beams_done == 1 ? 0 : 2;
    } catch (...) {
    }
    ::_exit(rc);
  }
  ::usleep(300'000);
  CHECK(q.read().count(BeamStatus::Available) == 1);
  q.write_control(Command::Run, "c");
  CHECK(wait_for(kid) == 0);
  CHECK(q.read().count(BeamStatus::Done) == 1);
  fs::remove_all(shared);
}

TEST_CASE("seven simultaneous downloads never overlap") {
  const auto shared = testgen::scratch_dir("cl-dl");
  std::string blob(4 << 20, 'x');
  { std::ofstream(shared / "big.fil", std::ios::binary) << blob; }
  std::vector<pid_t> kids;
  for (int c = 0; c < 7; ++c) {
    const pid_t pid = ::fork();
    REQUIRE(pid >= 0);
    if (pid == 0) {
      int rc = 1;
      try {
        auto cfg = config_for(shared, "d" + std::to_string(c));
        fs::create_directories(cfg.scratch_dir);
        rc = staggered_download(cfg, "big.fil").slot_timed_out ? 2 : 0;
      } catch (...) {
      }
      ::_exit(rc);
    }
    kids.push_back(pid);
  }
  for (pid_t k : kids) CHECK(wait_for(k) == 0);
  std::vector<std::pair<std::int64_t, std::int64_t>> spans;
  for (const auto &line : lines_of(shared / "downloads.log")) {
    std::istringstream ss(line);
    std::string who, file;
    std::int64_t a = 0, b = 0;
    ss >> who >> file >> a >> b;
    spans.emplace_back(a, b);
  }
  REQUIRE(spans.size() == 7);
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) CHECK(spans[i].first >= spans[i - 1].second);
  fs::remove_all(shared);
}

TEST_CASE("download slot left by a dead client is broken") {
  const auto shared = testgen::scratch_dir("cl-slot");
  { std::ofstream(shared / "x.fil") << "payload"; }
  const pid_t kid = ::fork();
  REQUIRE(kid >= 0);
  if (kid == 0) {
    auto slot = LockFile::acquire(shared / "download.slot", "ghost", {});
    ::raise(SIGKILL);
    ::_exit(0);
  }
  CHECK(wait_for(kid) == 128 + SIGKILL);
  REQUIRE(fs::exists(shared / "download.slot"));
  auto cfg = config_for(shared, "live");
  fs::create_directories(cfg.scratch_dir);
  const auto dl = staggered_download(cfg, "x.fil");
  CHECK_FALSE(dl.slot_timed_out);
  CHECK(*testgen::read_text(dl.local_path) == "payload");
  CHECK_FALSE(fs::exists(shared / "download.slot"));
  CHECK(code_of([&] { staggered_download(cfg, "missing.fil"); }) == ErrorCode::IoError);
  fs::remove_all(shared);
}

TEST_CASE("timing identity on table-scale numbers") {
  const auto slow = StageTiming::from_stages("c0", 44.5, 281.7, 514.9, 55.7, 11.3, 12.3, 450);
  CHECK(std::abs(slow.total_min - 99.9) < 0.05);
  CHECK(slow.identity_holds());
  const auto fast = StageTiming::from_stages("c5", 36.7, 66.4, 154.7, 19.5, 3.2, 3.6, 450);
  CHECK(std::abs(fast.total_min - 28.3) < 0.5);
  CHECK(std::abs(fast.total_min - 28.68) < 0.01);

  const auto back = StageTiming::parse_line(slow.to_line());
  CHECK(back.beam_id == "c0");
  CHECK(back.n_trials == 450);
  CHECK(back.hunt_trial_mean_s == doctest::Approx(11.3));
  CHECK(back.total_min == doctest::Approx(slow.total_min));
  CHECK(back.identity_holds());

  StageTiming off = slow;
  off.total_min *= 1.02;
  CHECK_FALSE(off.identity_holds());
  CHECK(code_of([] { StageTiming::parse_line("c0 1 2 3"); }) == ErrorCode::ParseError);
}

TEST_CASE("a single trial") {
  const auto shared = testgen::scratch_dir("cl-one");
  write_block(synthesize_beam(small_beam("one"), std::nullopt, 4), shared / "one.fil");
  auto cfg = config_for(shared, "c");
  cfg.n_trials = 1;
  const auto r = process_beam(shared / "one.fil", cfg);
  CHECK(r.timing.n_trials == 1);
  CHECK(r.timing.beam_id == "one");
  CHECK(r.timing.identity_holds());
  fs::remove_all(shared);
}

TEST_CASE("run_client and process_beam produce the same candidates") {
  const auto shared = make_shared("cl-same", 1);
  const auto cfg = config_for(shared, "c");
  const auto direct = process_beam(shared / "data" / "beam0.fil", cfg);
  run_client(cfg);
  std::ostringstream want;
  write_candidates(direct.candidates, want);
  CHECK(*testgen::read_text(shared / "results" / "beam0.cand") == want.str());
  CHECK(read_cands(shared / "results" / "beam0.cand").size() == direct.candidates.size());
  fs::remove_all(shared);
}

TEST_CASE("no client ever holds two claims at once") {
  const auto shared = make_shared("cl-multi", 6);
  std::vector<pid_t> kids;
  for (int c = 0; c < 3; ++c) {
    const pid_t pid = ::fork();
    REQUIRE(pid >= 0);
    if (pid == 0) {
      int rc = 1;
      try {
        run_client(config_for(shared, "m" + std::to_string(c)));
        rc = 0;
      } catch (...) {
      }
      ::_exit(rc);
    }
    kids.push_back(pid);
  }
  for (pid_t k : kids) CHECK(wait_for(k) == 0);
  const auto db = WorkQueue(shared).read();
  CHECK(db.count(BeamStatus::Done) == 6);
  std::map<std::string, int> held;
  for (const auto &t : committed_transitions(read_journal(shared), db.version)) {
    if (t.to == BeamStatus::Claimed) CHECK(++held[t.client_id] == 1);
    if (t.from == BeamStatus::Claimed) --held[t.client_id];
  }
  std::size_t timing_lines = 0;
  for (int c = 0; c < 3; ++c) timing_lines += lines_of(shared / "clients" / ("m" + std::to_string(c) + ".timing")).size();
  CHECK(timing_lines == 6);
  fs::remove_all(shared);
}

TEST_CASE("configuration errors") {
  const auto shared = testgen::scratch_dir("cl-cfg");
  auto cfg = config_for(shared, "c");
  CHECK(code_of([&] { run_client(cfg); }) == ErrorCode::FatalConfig);
  cfg.client_id = "bad/id";
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidParams);
  cfg = config_for(shared, "c");
  cfg.stagger_slot_s = 0.0;
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidParams);
  fs::remove_all(shared);
}

}
