#include <doctest.h>

#include <atomic>
#include <csignal>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <sys/wait.h>
#include <time.h>
#include <unistd.h>

#include "beamforge/error.hpp"
#include "beamforge/workqueue.hpp"
#include "generators.hpp"

using namespace beamforge;
using testgen::code_of;
namespace fs = std::filesystem;

namespace {

struct FakeClock {
  std::shared_ptr<std::atomic<std::int64_t>> t = std::make_shared<std::atomic<std::int64_t>>(1'000'000);
  Clock clock() const {
    auto p = t;
    return [p] { return p->load(); };
  }
  void advance(std::int64_t s) { *t += s; }
};

std::vector<std::pair<std::string, std::string>> beam_list(std::size_t n) {
  std::vector<std::pair<std::string, std::string>> v;
  for (std::size_t i = 0; i < n; ++i) {
    v.emplace_back("b" + std::to_string(i), "data/b" + std::to_string(i) + ".fil");
  }
  return v;
}

// Runs fn in a forked child; the child never returns into the test runner.
pid_t spawn(const std::function<int()> &fn) {
  const pid_t pid = ::fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    int rc = 99;
    try {
      rc = fn();
    } catch (...) {
      rc = 98;
    }
    ::_exit(rc);
  }
  return pid;
}

int wait_for(pid_t pid) {
  int status = 0;
  ::waitpid(pid, &status, 0);
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return 128 + WTERMSIG(status);
}

std::int64_t mono_ns() {
  timespec ts{};
  ::clock_gettime(CLOCK_MONOTONIC, &ts);
  return static_cast<std::int64_t>(ts.tv_sec) * 1'000'000'000 + ts.tv_nsec;
}

void append_line(const fs::path &path, const std::string &line) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  REQUIRE(fd >= 0);
  REQUIRE(::write(fd, line.data(), line.size()) == static_cast<ssize_t>(line.size()));
  ::close(fd);
}

std::vector<std::string> lines_of(const fs::path &path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) {
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

bool allowed(BeamStatus from, BeamStatus to) {
  using S = BeamStatus;
  return (from == S::Available && to == S::Claimed) ||
         (from == S::Claimed && (to == S::Done || to == S::Failed || to == S::Available)) ||
         (from == S::Failed && to == S::Available);
}

// Replays committed transitions from an all-AVAILABLE start; returns false
// on any transition whose `from` does not match the replayed state.
bool replay_matches(const fs::path &dir, const QueueDatabase &db) {
  std::map<std::string, BeamStatus> state;
  for (const auto &r : db.records) state[r.beam_id] = BeamStatus::Available;
  for (const auto &t : committed_transitions(read_journal(dir), db.version)) {
    if (!allowed(t.from, t.to) || state[t.beam_id] != t.from) return false;
    state[t.beam_id] = t.to;
  }
  for (const auto &r : db.records) {
    if (state[r.beam_id] != r.status) return false;
  }
  return true;
}

} // namespace

TEST_SUITE("workqueue") {

TEST_CASE("init") {
  const auto dir = testgen::scratch_dir("wq-init");
  WorkQueue q(dir);
  const auto db = q.init(beam_list(3016));
  CHECK(db.records.size() == 3016);
  CHECK(db.count(BeamStatus::Available) == 3016);
  CHECK(q.read() == db);
  CHECK(q.init({}).records.empty());
  CHECK(q.read().records.empty());
  auto dup = beam_list(3);
  dup.push_back(dup[1]);
  CHECK(code_of([&] { q.init(dup); }) == ErrorCode::DuplicateBeamId);
  fs::remove_all(dir);
}

TEST_CASE("database text round trip") {
  testgen::Gen g(71);
  const std::vector<BeamStatus> statuses = {BeamStatus::Available, BeamStatus::Claimed, BeamStatus::Done,
                                            BeamStatus::Failed};
  for (int rep = 0; rep < 200; ++rep) {
    QueueDatabase db;
    db.version = g.u64() % 100000;
    const auto n = g.range(0, 30);
    for (std::int64_t i = 0; i < n; ++i) {
      BeamRecord r;
      r.beam_id = "beam" + std::to_string(i) + "_" + std::to_string(g.u64() % 1000);
      r.status = g.pick(statuses);
      r.data_path = "data/x" + std::to_string(i) + ".fil";
      r.claimant = g.coin() ? "-" : "c" + std::to_string(g.range(0, 9));
      r.claimed_at = g.range(0, 2'000'000'000);
      r.finished_at = g.range(0, 2'000'000'000);
      r.attempts = static_cast<std::uint32_t>(g.range(0, 5));
      db.records.push_back(r);
    }
    CHECK(QueueDatabase::parse(db.serialize()) == db);
  }
  CHECK(code_of([] { QueueDatabase::parse(""); }) == ErrorCode::ParseError);
  CHECK(code_of([] { QueueDatabase::parse("#BEAMDB v1 version=1\na|DONE|x\n"); }) == ErrorCode::ParseError);
  CHECK(code_of([] { QueueDatabase::parse("#BEAMDB v1 version=1\na|MAYBE|x|-|0|0|0\n"); }) == ErrorCode::ParseError);
}

TEST_CASE("claim, done, failed and the protocol errors") {
  const auto dir = testgen::scratch_dir("wq-claim");
  WorkQueue q(dir);
  q.init({{"A", "a.fil"}, {"B", "b.fil"}, {"C", "c.fil"}});

  const auto a = q.claim_next("x");
  CHECK(a.beam_id == "A");
  auto db = q.read();
  CHECK(db.find("A")->status == BeamStatus::Claimed);
  CHECK(db.find("A")->claimant == "x");
  CHECK(db.find("A")->attempts == 1);
  CHECK(db.find("B")->status == BeamStatus::Available);
  CHECK(db.find("C")->status == BeamStatus::Available);

  CHECK(code_of([&] { q.mark_done("y", "A", "results/A.cands"); }) == ErrorCode::NotClaimant);
  CHECK(code_of([&] { q.mark_done("x", "B", "results/B.cands"); }) == ErrorCode::NotClaimant);
  CHECK(code_of([&] { q.mark_done("x", "Z", "results/Z.cands"); }) == ErrorCode::UnknownBeam);
  q.mark_done("x", "A", "results/A.cands");
  CHECK(q.read().find("A")->status == BeamStatus::Done);
  CHECK(code_of([&] { q.mark_done("x", "A", "results/A.cands"); }) == ErrorCode::NotClaimant);

  q.claim_next("y");
  q.mark_failed("y", "B", "TruncatedData");
  CHECK(q.read().find("B")->status == BeamStatus::Failed);
  const auto failures = lines_of(dir / "failures.log");
  REQUIRE(failures.size() == 1);
  CHECK(failures[0].find("B y TruncatedData") != std::string::npos);
  const auto manifest = lines_of(dir / "results.manifest");
  REQUIRE(manifest.size() == 1);
  CHECK(manifest[0].rfind("A results/A.cands x ", 0) == 0);

  q.claim_next("x");
  q.mark_done("x", "C", "results/C.cands");
  CHECK(code_of([&] { q.claim_next("x"); }) == ErrorCode::NoWork);
  CHECK(replay_matches(dir, q.read()));

  CHECK(q.requeue_failed(3) == 1);
  CHECK(q.read().find("B")->status == BeamStatus::Available);
  CHECK(q.read().find("B")->attempts == 1);
  CHECK(code_of([&] { q.claim_next("bad id"); }) == ErrorCode::InvalidParams);
  fs::remove_all(dir);
}

TEST_CASE("requeue_failed respects the attempt limit unless asked for all") {
  const auto dir = testgen::scratch_dir("wq-fail");
  WorkQueue q(dir);
  q.init(beam_list(1));
  for (int i = 0; i < 3; ++i) {
    q.claim_next("x");
    q.mark_failed("x", "b0", "IoError");
    if (i < 2) CHECK(q.requeue_failed(3) == 1);
  }
  CHECK(q.read().find("b0")->attempts == 3);
  CHECK(q.requeue_failed(3) == 0);
  CHECK(q.requeue_failed(3, true) == 1);
  fs::remove_all(dir);
}

TEST_CASE("stale claims go back to the queue and finish elsewhere") {
  const auto dir = testgen::scratch_dir("wq-stale");
  FakeClock fc;
  QueueOptions opts;
  opts.clock = fc.clock();
  WorkQueue q(dir, opts);
  q.init(beam_list(2));

  q.claim_next("crashed");
  ClientStatus st;
  st.client_id = "crashed";
  st.heartbeat = fc.t->load();
  q.write_status(st);

  fc.advance(10);
  CHECK(q.requeue_stale(600) == 0);
  fc.advance(690);
  CHECK(q.requeue_stale(600) == 1);
  auto rec = *q.read().find("b0");
  CHECK(rec.status == BeamStatus::Available);
  CHECK(rec.claimant == "-");

  const auto again = q.claim_next("other");
  CHECK(again.beam_id == "b0");
  q.mark_done("other", "b0", "results/b0.cands");
  rec = *q.read().find("b0");
  CHECK(rec.status == BeamStatus::Done);
  CHECK(rec.attempts == 2);
  CHECK(replay_matches(dir, q.read()));
  CHECK(code_of([&] { q.requeue_stale(-1); }) == ErrorCode::InvalidParams);
  fs::remove_all(dir);
}

TEST_CASE("control files") {
  const auto dir = testgen::scratch_dir("wq-control");
  WorkQueue q(dir);
  CHECK(q.read_control("x") == Command::Run);
  q.write_control(Command::Pause);
  q.write_control(Command::Run, "x");
  CHECK(q.read_control("x") == Command::Run);
  CHECK(q.read_control("y") == Command::Pause);
  q.write_control(Command::Stop);
  CHECK(q.read_control("y") == Command::Stop);
  {
    std::ofstream(dir / "CONTROL") << "HALT\n";
  }
  CHECK(code_of([&] { q.read_control("y"); }) == ErrorCode::ParseError);
  CHECK(parse_command(" STOP \n") == Command::Stop);
  CHECK(code_of([] { parse_command("stop"); }) == ErrorCode::ParseError);
  fs::remove_all(dir);
}

TEST_CASE("client status files") {
  const auto dir = testgen::scratch_dir("wq-status");
  WorkQueue q(dir);
  CHECK_FALSE(q.read_status("nobody").has_value());
  ClientStatus st;
  st.client_id = "c1";
  st.current_beam = "b7";
  st.phase = ClientPhase::Hunt;
  st.heartbeat = 12345;
  st.trials_done = 200;
  q.write_status(st);
  const auto back = q.read_status("c1");
  REQUIRE(back.has_value());
  CHECK(back->phase == ClientPhase::Hunt);
  CHECK(back->current_beam == "b7");
  CHECK(back->heartbeat == 12345);
  CHECK(back->trials_done == 200);
  CHECK(is_safe_client_id("client-07.a_b"));
  CHECK_FALSE(is_safe_client_id("../etc"));
  CHECK_FALSE(is_safe_client_id(""));
  CHECK_FALSE(is_safe_client_id("a b"));
  fs::remove_all(dir);
}

TEST_CASE("snapshot rate and eta") {
  const auto dir = testgen::scratch_dir("wq-snap");
  FakeClock fc;
  QueueOptions opts;
  opts.clock = fc.clock();
  WorkQueue q(dir, opts);
  q.init(beam_list(100));
  auto snap = q.snapshot();
  CHECK(snap.total == 100);
  CHECK(snap.counts[BeamStatus::Available] == 100);
  CHECK(snap.counts[BeamStatus::Done] == 0);
  CHECK_FALSE(snap.eta_s.has_value());

  // Two clients finish 50 beams over 100 minutes.
  for (int i = 0; i < 50; i += 2) {
    const auto a = q.claim_next("x");
    const auto b = q.claim_next("y");
    fc.advance(240);
    q.mark_done("x", a.beam_id, "r");
    q.mark_done("y", b.beam_id, "r");
  }
  snap = q.snapshot();
  CHECK(snap.counts[BeamStatus::Done] == 50);
  REQUIRE(snap.eta_s.has_value());
  CHECK(*snap.eta_s / 60.0 == doctest::Approx(100.0));
  CHECK(format_snapshot(snap).find("eta 100.0 min") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("lock file basics, staleness and theft") {
  const auto dir = testgen::scratch_dir("wq-lock");
  FakeClock fc;
  LockFileOptions lo;
  lo.clock = fc.clock();
  lo.timeout_s = 0.2;
  const auto path = dir / "db.lock";

  auto lock = LockFile::acquire(path, "me", lo);
  const auto owner = LockOwner::parse(*testgen::read_text(path));
  REQUIRE(owner.has_value());
  CHECK(owner->nonce == lock.nonce());
  CHECK(owner->client_id == "me");
  CHECK(owner->pid == static_cast<long>(::getpid()));
  CHECK_NOTHROW(lock.verify());

  // Held by a live process and fresh: nobody else gets it.
  CHECK(code_of([&] { LockFile::acquire(path, "other", lo); }) == ErrorCode::LockTimeout);

  // 400 s later with a 300 s threshold the lock is broken and set aside.
  fc.advance(400);
  lo.stale_secs = 300;
  auto taken = LockFile::acquire(path, "other", lo);
  CHECK(code_of([&] { lock.verify(); }) == ErrorCode::LockStolen);
  std::size_t aside = 0;
  for (const auto &e : fs::directory_iterator(dir)) {
    if (e.path().filename().string().rfind("db.lock.stale.", 0) == 0) {
      ++aside;
      CHECK(LockOwner::parse(*testgen::read_text(e.path()))->nonce == lock.nonce());
    }
  }
  CHECK(aside == 1);
  // Releasing a stolen lock must not remove the new holder's file.
  lock.release();
  CHECK(fs::exists(path));
  taken.release();
  CHECK_FALSE(fs::exists(path));
  fs::remove_all(dir);
}

TEST_CASE("lock held by a dead process on this host is broken at once") {
  const auto dir = testgen::scratch_dir("wq-dead");
  const auto path = dir / "db.lock";
  const pid_t child = spawn([&] {
    auto l = LockFile::acquire(path, "doomed", {});
    ::raise(SIGKILL);
    return 0;
  });
  CHECK(wait_for(child) == 128 + SIGKILL);
  REQUIRE(fs::exists(path));
  LockFileOptions lo;
  lo.timeout_s = 2.0;
  auto mine = LockFile::acquire(path, "me", lo);
  CHECK_NOTHROW(mine.verify());
  fs::remove_all(dir);
}

TEST_CASE("16 processes, 1000 critical sections, no overlap") {
  const auto dir = testgen::scratch_dir("wq-stress");
  WorkQueue q(dir);
  q.init({});
  const auto log = dir / "intervals.log";
  std::vector<pid_t> kids;
  for (int p = 0; p < 16; ++p) {
    const int cycles = 1000 / 16 + (p < 1000 % 16 ? 1 : 0);
    kids.push_back(spawn([&, cycles] {
      WorkQueue mine(dir);
      const std::string me = std::to_string(::getpid());
      for (int i = 0; i < cycles; ++i) {
        auto token = mine.acquire_lock("s" + me);
        append_line(log, "E " + me + " " + std::to_string(mono_ns()) + "\n");
        append_line(log, "X " + me + " " + std::to_string(mono_ns()) + "\n");
        token.release();
      }
      return 0;
    }));
  }
  for (pid_t k : kids) CHECK(wait_for(k) == 0);
  const auto lines = lines_of(log);
  REQUIRE(lines.size() == 2000);
  std::int64_t last_exit = 0;
  for (std::size_t i = 0; i < lines.size(); i += 2) {
    std::istringstream e(lines[i]), x(lines[i + 1]);
    char ek, xk;
    std::string ep, xp;
    std::int64_t et, xt;
    e >> ek >> ep >> et;
    x >> xk >> xp >> xt;
    CHECK(ek == 'E');
    CHECK(xk == 'X');
    CHECK(ep == xp);
    CHECK(et >= last_exit);
    last_exit = xt;
  }
  fs::remove_all(dir);
}

TEST_CASE("7 clients claim 100 beams concurrently, each exactly once") {
  const auto dir = testgen::scratch_dir("wq-claim7");
  WorkQueue(dir).init(beam_list(100));
  std::vector<pid_t> kids;
  for (int c = 0; c < 7; ++c) {
    kids.push_back(spawn([&, c] {
      WorkQueue mine(dir);
      const std::string id = "c" + std::to_string(c);
      std::string got;
      for (;;) {
        try {
          got += mine.claim_next(id).beam_id + "\n";
        } catch (const Error &e) {
          if (e.code() == ErrorCode::NoWork) break;
          throw;
        }
      }
      std::ofstream(dir / (id + ".claims")) << got;
      return 0;
    }));
  }
  for (pid_t k : kids) CHECK(wait_for(k) == 0);
  std::multiset<std::string> all;
  for (int c = 0; c < 7; ++c) {
    for (const auto &b : lines_of(dir / ("c" + std::to_string(c) + ".claims"))) all.insert(b);
  }
  CHECK(all.size() == 100);
  CHECK(std::set<std::string>(all.begin(), all.end()).size() == 100);
  const auto db = WorkQueue(dir).read();
  CHECK(db.count(BeamStatus::Claimed) == 100);
  CHECK(db.version == 101);
  CHECK(replay_matches(dir, db));
  fs::remove_all(dir);
}

TEST_CASE("a writer killed at any protocol point leaves a consistent queue") {
  for (const char *point : {"lock.acquired", "db.written", "journal.appended", "db.renamed"}) {
    CAPTURE(point);
    const auto dir = testgen::scratch_dir("wq-kill");
    WorkQueue(dir).init(beam_list(3));
    const std::string target = point;
    const pid_t child = spawn([&] {
      QueueOptions o;
      o.fault_hook = [&](std::string_view p) {
        if (p == target) ::raise(SIGKILL);
      };
      WorkQueue(dir, o).claim_next("victim");
      return 0;
    });
    CHECK(wait_for(child) == 128 + SIGKILL);
    CHECK_NOTHROW(WorkQueue(dir).read());

    QueueOptions o;
    o.lock_timeout_s = 5.0;
    WorkQueue q(dir, o);
    // The next writer breaks the dead holder's lock and carries on.
    q.requeue_stale(0);
    while (true) {
      try {
        const auto r = q.claim_next("survivor");
        q.mark_done("survivor", r.beam_id, "r");
      } catch (const Error &e) {
        REQUIRE(e.code() == ErrorCode::NoWork);
        break;
      }
    }
    const auto db = q.read();
    CHECK(db.count(BeamStatus::Done) == 3);
    CHECK(replay_matches(dir, db));
    std::map<std::string, int> done;
    for (const auto &t : committed_transitions(read_journal(dir), db.version)) {
      if (t.to == BeamStatus::Done) ++done[t.beam_id];
    }
    for (const auto &r : db.records) CHECK(done[r.beam_id] == 1);
    fs::remove_all(dir);
  }
}

TEST_CASE("committed transitions: last writer per version wins") {
  auto t = [](std::uint64_t v, std::string w, std::string beam) {
    Transition x;
    x.version = v;
    x.writer = std::move(w);
    x.beam_id = std::move(beam);
    x.from = BeamStatus::Available;
    x.to = BeamStatus::Claimed;
    return x;
  };
  const std::vector<Transition> journal = {t(2, "w1", "a"), t(3, "dead", "b"), t(3, "w2", "c"),
                                           t(3, "w2", "d"), t(4, "w3", "e")};
  const auto c = committed_transitions(journal, 3);
  REQUIRE(c.size() == 3);
  CHECK(c[0].beam_id == "a");
  CHECK(c[1].beam_id == "c");
  CHECK(c[2].beam_id == "d");
}

TEST_CASE("random operation sequences keep the journal and database in step") {
  testgen::Gen g(72);
  const auto dir = testgen::scratch_dir("wq-random");
  FakeClock fc;
  QueueOptions opts;
  opts.clock = fc.clock();
  WorkQueue q(dir, opts);
  q.init(beam_list(12));
  const std::vector<std::string> clients = {"c0", "c1", "c2"};
  for (int step = 0; step < 300; ++step) {
    fc.advance(g.range(0, 50));
    const auto db = q.read();
    const auto op = g.range(0, 4);
    const std::string who = g.pick(clients);
    try {
      if (op == 0) {
        q.claim_next(who);
      } else if (op == 1 || op == 2) {
        const auto &r = g.pick(db.records);
        if (op == 1) {
          q.mark_done(who, r.beam_id, "r");
        } else {
          q.mark_failed(who, r.beam_id, "x");
        }
      } else if (op == 3) {
        q.requeue_stale(g.range(0, 100));
      } else {
        q.requeue_failed(static_cast<std::uint32_t>(g.range(1, 4)), g.coin(0.2));
      }
    } catch (const Error &e) {
      CHECK((e.code() == ErrorCode::NoWork || e.code() == ErrorCode::NotClaimant));
    }
    const auto after = q.read();
    REQUIRE(replay_matches(dir, after));
    for (const auto &r : after.records) {
      if (r.status == BeamStatus::Claimed) CHECK(r.claimant != "-");
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("lock owner text round trip") {
  LockOwner o{"client-3", 1234567, "abcdef0123456789", "node7", 4242};
  const auto back = LockOwner::parse(o.serialize());
  REQUIRE(back.has_value());
  CHECK(back->client_id == o.client_id);
  CHECK(back->epoch == o.epoch);
  CHECK(back->nonce == o.nonce);
  CHECK(back->host == o.host);
  CHECK(back->pid == o.pid);
  CHECK_FALSE(LockOwner::parse("half written").has_value());
}

}
