#include "beamforge/workqueue.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "beamforge/error.hpp"
#include "fsutil.hpp"

namespace beamforge {

namespace fs = std::filesystem;

std::int64_t system_epoch_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

namespace {

std::int64_t now_from(const Clock &clock) { return clock ? clock() : system_epoch_seconds(); }

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

std::vector<std::string_view> words(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T> bool parse_int(std::string_view s, T &out) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

template <typename T> T require_int(std::string_view s, std::string_view what) {
  T v{};
  if (!parse_int(s, v)) {
    throw Error(ErrorCode::ParseError, "bad " + std::string(what) + ": '" + std::string(s) + "'");
  }
  return v;
}

bool is_safe_beam_id(std::string_view id) {
  if (id.empty() || id.size() > 128) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-' ||
           c == '+' || c == ':';
  });
}

bool is_safe_data_path(std::string_view p) {
  return !p.empty() && p.find_first_of("|\n\r") == std::string_view::npos;
}

std::string one_line(std::string_view s) {
  std::string out(s);
  std::replace_if(out.begin(), out.end(), [](char c) { return c == '\n' || c == '\r'; }, ' ');
  return out;
}

bool process_is_dead(const LockOwner &owner) {
  if (owner.pid <= 0 || owner.host != detail::host_name()) return false;
  return ::kill(static_cast<pid_t>(owner.pid), 0) != 0 && errno == ESRCH;
}

// Age of an unreadable lock file (holder still writing it, or garbage).
std::int64_t mtime_age_s(const fs::path &path) {
  std::error_code ec;
  const auto t = fs::last_write_time(path, ec);
  if (ec) return 0;
  const auto age = fs::file_time_type::clock::now() - t;
  return std::chrono::duration_cast<std::chrono::seconds>(age).count();
}

// Moves a stale lock aside. If, between our read and the rename, the stale
// lock was replaced by a live one, the live one is put back.
void break_stale(const fs::path &path, const std::string &stale_text, std::int64_t now) {
  fs::path aside = path;
  aside += ".stale." + std::to_string(now) + "." + detail::random_hex(6);
  if (::rename(path.c_str(), aside.c_str()) != 0) {
    return; // someone else broke or released it
  }
  const auto moved = detail::read_file_if_exists(aside);
  if (moved && *moved != stale_text) {
    if (::link(aside.c_str(), path.c_str()) == 0) {
      ::unlink(aside.c_str());
    }
  }
}

void sleep_s(double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); }

} // namespace

std::string_view to_string(BeamStatus s) {
  switch (s) {
  case BeamStatus::Available: return "AVAILABLE";
  case BeamStatus::Claimed: return "CLAIMED";
  case BeamStatus::Done: return "DONE";
  case BeamStatus::Failed: return "FAILED";
  }
  return "?";
}

BeamStatus parse_beam_status(std::string_view word) {
  for (auto s : {BeamStatus::Available, BeamStatus::Claimed, BeamStatus::Done, BeamStatus::Failed}) {
    if (word == to_string(s)) return s;
  }
  throw Error(ErrorCode::ParseError, "unknown beam status '" + std::string(word) + "'");
}

std::string_view to_string(Command c) {
  switch (c) {
  case Command::Run: return "RUN";
  case Command::Pause: return "PAUSE";
  case Command::Stop: return "STOP";
  }
  return "?";
}

Command parse_command(std::string_view text) {
  const auto hash = text.find('#');
  const auto word = trim(text.substr(0, hash));
  for (auto c : {Command::Run, Command::Pause, Command::Stop}) {
    if (word == to_string(c)) return c;
  }
  throw Error(ErrorCode::ParseError, "unknown control command '" + std::string(word) + "'");
}

std::string_view to_string(ClientPhase p) {
  switch (p) {
  case ClientPhase::Idle: return "IDLE";
  case ClientPhase::Download: return "DOWNLOAD";
  case ClientPhase::Decimate: return "DECIMATE";
  case ClientPhase::Convert: return "CONVERT";
  case ClientPhase::Hunt: return "HUNT";
  case ClientPhase::Best: return "BEST";
  case ClientPhase::Upload: return "UPLOAD";
  }
  return "?";
}

ClientPhase parse_client_phase(std::string_view word) {
  for (auto p : {ClientPhase::Idle, ClientPhase::Download, ClientPhase::Decimate, ClientPhase::Convert,
                 ClientPhase::Hunt, ClientPhase::Best, ClientPhase::Upload}) {
    if (word == to_string(p)) return p;
  }
  throw Error(ErrorCode::ParseError, "unknown client phase '" + std::string(word) + "'");
}

bool is_safe_client_id(std::string_view id) {
  if (id.empty() || id.size() > 64 || id.front() == '.') return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
  });
}

// ---- database text -------------------------------------------------------

QueueDatabase QueueDatabase::parse(std::string_view text) {
  QueueDatabase db;
  const auto lines = split(text, '\n');
  if (lines.empty()) {
    throw Error(ErrorCode::ParseError, "empty database");
  }
  const auto header = words(trim(lines[0]));
  if (header.size() != 3 || header[0] != "#BEAMDB" || header[1] != "v1" ||
      header[2].substr(0, 8) != "version=") {
    throw Error(ErrorCode::ParseError, "bad database header");
  }
  db.version = require_int<std::uint64_t>(header[2].substr(8), "version");
  std::unordered_set<std::string_view> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto line = trim(lines[i]);
    if (line.empty()) continue;
    const auto f = split(line, '|');
    if (f.size() != 7) {
      throw Error(ErrorCode::ParseError, "database record needs 7 fields: " + std::string(line));
    }
    BeamRecord r;
    r.beam_id = std::string(f[0]);
    r.status = parse_beam_status(f[1]);
    r.data_path = std::string(f[2]);
    r.claimant = std::string(f[3]);
    r.claimed_at = require_int<std::int64_t>(f[4], "claimed_at");
    r.finished_at = require_int<std::int64_t>(f[5], "finished_at");
    r.attempts = require_int<std::uint32_t>(f[6], "attempts");
    if (!seen.insert(f[0]).second) {
      throw Error(ErrorCode::ParseError, "duplicate beam id " + r.beam_id);
    }
    db.records.push_back(std::move(r));
  }
  return db;
}

std::string QueueDatabase::serialize() const {
  std::string out = "#BEAMDB v1 version=" + std::to_string(version) + "\n";
  for (const auto &r : records) {
    out += r.beam_id;
    out += '|';
    out += to_string(r.status);
    out += '|';
    out += r.data_path;
    out += '|';
    out += r.claimant;
    out += '|' + std::to_string(r.claimed_at) + '|' + std::to_string(r.finished_at) + '|' +
           std::to_string(r.attempts) + '\n';
  }
  return out;
}

const BeamRecord *QueueDatabase::find(std::string_view beam_id) const {
  for (const auto &r : records) {
    if (r.beam_id == beam_id) return &r;
  }
  return nullptr;
}

BeamRecord *QueueDatabase::find(std::string_view beam_id) {
  return const_cast<BeamRecord *>(std::as_const(*this).find(beam_id));
}

std::size_t QueueDatabase::count(BeamStatus s) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [s](const BeamRecord &r) { return r.status == s; }));
}

// ---- lock file -----------------------------------------------------------

std::string LockOwner::serialize() const {
  return client_id + " " + std::to_string(epoch) + " " + nonce + " " + host + " " + std::to_string(pid) + "\n";
}

std::optional<LockOwner> LockOwner::parse(std::string_view text) {
  const auto w = words(trim(text));
  if (w.size() != 5) return std::nullopt;
  LockOwner o;
  o.client_id = std::string(w[0]);
  o.nonce = std::string(w[2]);
  o.host = std::string(w[3]);
  if (!parse_int(w[1], o.epoch) || !parse_int(w[4], o.pid)) return std::nullopt;
  return o;
}

std::optional<LockFile> LockFile::try_acquire(const fs::path &path, std::string_view owner_id,
                                              const LockFileOptions &opts) {
  LockOwner owner;
  owner.client_id = std::string(owner_id);
  owner.epoch = now_from(opts.clock);
  owner.nonce = detail::random_hex(16);
  owner.host = detail::host_name();
  owner.pid = static_cast<long>(::getpid());

  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0644);
  if (fd >= 0) {
    const std::string text = owner.serialize();
    const bool ok = ::write(fd, text.data(), text.size()) == static_cast<ssize_t>(text.size());
    ::fsync(fd);
    ::close(fd);
    if (!ok) {
      ::unlink(path.c_str());
      throw Error(ErrorCode::IoError, "cannot write lock file " + path.string());
    }
    return LockFile(path, owner.nonce);
  }
  if (errno != EEXIST) {
    throw Error(ErrorCode::IoError, "cannot create " + path.string() + ": " + std::strerror(errno));
  }

  const auto text = detail::read_file_if_exists(path);
  if (!text) return std::nullopt; // released meanwhile; caller retries
  const auto holder = LockOwner::parse(*text);
  const std::int64_t now = now_from(opts.clock);
  bool stale = false;
  if (holder) {
    stale = now - holder->epoch > opts.stale_secs || process_is_dead(*holder);
  } else {
    stale = mtime_age_s(path) > opts.stale_secs;
  }
  if (stale) {
    break_stale(path, *text, now);
  }
  return std::nullopt;
}

LockFile LockFile::acquire(const fs::path &path, std::string_view owner_id, const LockFileOptions &opts) {
  const auto start = std::chrono::steady_clock::now();
  thread_local std::minstd_rand jitter(static_cast<unsigned>(::getpid()));
  for (;;) {
    if (auto lock = try_acquire(path, owner_id, opts)) {
      return std::move(*lock);
    }
    const double waited = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (waited >= opts.timeout_s) {
      throw Error(ErrorCode::LockTimeout, "gave up on " + path.string() + " after " + std::to_string(waited) + " s");
    }
    sleep_s(opts.poll_s * (0.5 + static_cast<double>(jitter() % 1000) / 1000.0));
  }
}

LockFile::LockFile(LockFile &&other) noexcept
    : path_(std::move(other.path_)), nonce_(std::move(other.nonce_)), held_(other.held_) {
  other.held_ = false;
}

LockFile &LockFile::operator=(LockFile &&other) noexcept {
  if (this != &other) {
    try {
      release();
    } catch (...) {
    }
    path_ = std::move(other.path_);
    nonce_ = std::move(other.nonce_);
    held_ = other.held_;
    other.held_ = false;
  }
  return *this;
}

LockFile::~LockFile() {
  try {
    release();
  } catch (...) {
  }
}

void LockFile::verify() const {
  if (!held_) {
    throw Error(ErrorCode::LockStolen, "lock not held");
  }
  const auto text = detail::read_file_if_exists(path_);
  const auto holder = text ? LockOwner::parse(*text) : std::nullopt;
  if (!holder || holder->nonce != nonce_) {
    throw Error(ErrorCode::LockStolen, "lock " + path_.string() + " no longer carries our nonce");
  }
}

void LockFile::release() {
  if (!held_) return;
  held_ = false;
  const auto text = detail::read_file_if_exists(path_);
  const auto holder = text ? LockOwner::parse(*text) : std::nullopt;
  if (holder && holder->nonce == nonce_) {
    ::unlink(path_.c_str());
  }
}

LockToken::LockToken(LockToken &&other) noexcept : file_(std::move(other.file_)), fd_(other.fd_) {
  other.fd_ = -1;
}

LockToken &LockToken::operator=(LockToken &&other) noexcept {
  if (this != &other) {
    release();
    file_ = std::move(other.file_);
    fd_ = other.fd_;
    other.fd_ = -1;
  }
  return *this;
}

LockToken::~LockToken() { release(); }

void LockToken::release() {
  try {
    file_.release();
  } catch (...) {
  }
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
    fd_ = -1;
  }
}

// ---- journal -------------------------------------------------------------

std::vector<Transition> read_journal(const fs::path &shared_dir) {
  std::vector<Transition> out;
  const auto text = detail::read_file_if_exists(shared_dir / "db.journal");
  if (!text) return out;
  const auto lines = split(*text, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto w = words(lines[i]);
    if (w.empty()) continue;
    Transition t;
    const bool last = i + 1 == lines.size(); // no trailing newline: torn append
    if (w.size() != 7 || !parse_int(w[0], t.version) || !parse_int(w[6], t.epoch)) {
      if (last) break;
      throw Error(ErrorCode::ParseError, "bad journal line: " + std::string(lines[i]));
    }
    t.writer = std::string(w[1]);
    t.beam_id = std::string(w[2]);
    t.from = parse_beam_status(w[3]);
    t.to = parse_beam_status(w[4]);
    t.client_id = std::string(w[5]);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Transition> committed_transitions(const std::vector<Transition> &journal,
                                              std::uint64_t db_version) {
  std::unordered_map<std::uint64_t, std::string> last_writer;
  for (const auto &t : journal) {
    last_writer[t.version] = t.writer;
  }
  std::vector<Transition> out;
  for (const auto &t : journal) {
    if (t.version <= db_version && last_writer[t.version] == t.writer) {
      out.push_back(t);
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Transition &a, const Transition &b) { return a.version < b.version; });
  return out;
}

// ---- queue ---------------------------------------------------------------

WorkQueue::WorkQueue(fs::path shared_dir, QueueOptions opts) : dir_(std::move(shared_dir)), opts_(std::move(opts)) {}

std::int64_t WorkQueue::now() const { return now_from(opts_.clock); }

void WorkQueue::hook(std::string_view point) const {
  if (opts_.fault_hook) opts_.fault_hook(point);
}

LockToken WorkQueue::acquire_lock(std::string_view client_id) const {
  const auto start = std::chrono::steady_clock::now();
  LockFileOptions lopts;
  lopts.timeout_s = opts_.lock_timeout_s;
  lopts.stale_secs = opts_.lock_stale_secs;
  lopts.clock = opts_.clock;
  LockFile file = LockFile::acquire(dir_ / "db.lock", client_id, lopts);

  const fs::path flock_path = dir_ / "db.flock";
  const int fd = ::open(flock_path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) {
    throw Error(ErrorCode::IoError, "cannot open " + flock_path.string() + ": " + std::strerror(errno));
  }
  while (::flock(fd, LOCK_EX | LOCK_NB) != 0) {
    if (errno != EWOULDBLOCK && errno != EINTR) {
      // No advisory locking on this filesystem; the other two still hold.
      if (errno == ENOLCK || errno == EOPNOTSUPP) break;
      ::close(fd);
      throw Error(ErrorCode::IoError, std::string("flock: ") + std::strerror(errno));
    }
    const double waited = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (waited >= opts_.lock_timeout_s) {
      ::close(fd);
      throw Error(ErrorCode::LockTimeout, "advisory lock on " + flock_path.string() + " timed out");
    }
    sleep_s(0.001);
  }
  return LockToken(std::move(file), fd);
}

template <typename Fn>
void WorkQueue::mutate(std::string_view client_id, Fn &&fn, const std::function<void()> &after) {
  LockToken token = acquire_lock(client_id);
  hook("lock.acquired");
  // Fires on every exit path while the lock is still held.
  struct ReleaseHook {
    const WorkQueue *q;
    ~ReleaseHook() {
      try {
        q->hook("lock.releasing");
      } catch (...) {
      }
    }
  } release_hook{this};
  QueueDatabase db = read();
  std::vector<Transition> transitions;
  fn(db, transitions);
  if (transitions.empty()) {
    return;
  }
  db.version += 1;
  const std::int64_t t_now = now();
  std::string journal;
  for (auto &t : transitions) {
    t.version = db.version;
    t.writer = token.nonce();
    t.epoch = t_now;
    journal += std::to_string(t.version) + " " + t.writer + " " + t.beam_id + " " +
               std::string(to_string(t.from)) + " " + std::string(to_string(t.to)) + " " + t.client_id +
               " " + std::to_string(t.epoch) + "\n";
  }
  token.verify();
  fs::path tmp = db_path();
  tmp += ".tmp." + token.nonce();
  {
    const std::string text = db.serialize();
    FILE *f = std::fopen(tmp.c_str(), "wb");
    if (!f) {
      throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    }
    const bool ok = std::fwrite(text.data(), 1, text.size(), f) == text.size() && std::fflush(f) == 0 &&
                    ::fsync(::fileno(f)) == 0;
    std::fclose(f);
    if (!ok) {
      fs::remove(tmp);
      throw Error(ErrorCode::IoError, "short write to " + tmp.string());
    }
  }
  hook("db.written");
  detail::append_to_file(dir_ / "db.journal", journal);
  hook("journal.appended");
  try {
    token.verify();
  } catch (...) {
    fs::remove(tmp);
    throw;
  }
  if (::rename(tmp.c_str(), db_path().c_str()) != 0) {
    throw Error(ErrorCode::IoError, "rename onto " + db_path().string() + ": " + std::strerror(errno));
  }
  hook("db.renamed");
  if (after) after();
}

QueueDatabase WorkQueue::init(const std::vector<std::pair<std::string, std::string>> &beams) {
  QueueDatabase db;
  db.version = 1;
  std::unordered_set<std::string> seen;
  for (const auto &[id, path] : beams) {
    if (!is_safe_beam_id(id)) {
      throw Error(ErrorCode::InvalidParams, "unusable beam id '" + id + "'");
    }
    if (!is_safe_data_path(path)) {
      throw Error(ErrorCode::InvalidParams, "unusable data path for " + id);
    }
    if (!seen.insert(id).second) {
      throw Error(ErrorCode::DuplicateBeamId, "beam id " + id + " listed twice");
    }
    BeamRecord r;
    r.beam_id = id;
    r.data_path = path;
    db.records.push_back(std::move(r));
  }
  std::error_code ec;
  fs::create_directories(clients_dir(), ec);
  fs::create_directories(results_dir(), ec);
  if (!fs::is_directory(dir_) || !fs::is_directory(clients_dir())) {
    throw Error(ErrorCode::IoError, "cannot create shared directory " + dir_.string());
  }
  LockToken token = acquire_lock("init");
  fs::remove(dir_ / "db.journal", ec);
  detail::write_file_atomic(db_path(), db.serialize());
  return db;
}

QueueDatabase WorkQueue::read() const { return QueueDatabase::parse(detail::read_file(db_path())); }

BeamRecord WorkQueue::claim_next(std::string_view client_id) {
  if (!is_safe_client_id(client_id)) {
    throw Error(ErrorCode::InvalidParams, "unusable client id '" + std::string(client_id) + "'");
  }
  BeamRecord claimed;
  mutate(client_id, [&](QueueDatabase &db, std::vector<Transition> &tr) {
    auto it = std::find_if(db.records.begin(), db.records.end(),
                           [](const BeamRecord &r) { return r.status == BeamStatus::Available; });
    if (it == db.records.end()) {
      throw Error(ErrorCode::NoWork, "no AVAILABLE beams");
    }
    it->status = BeamStatus::Claimed;
    it->claimant = std::string(client_id);
    it->claimed_at = std::max<std::int64_t>(now(), 1);
    it->finished_at = 0;
    it->attempts += 1;
    claimed = *it;
    tr.push_back({0, {}, it->beam_id, BeamStatus::Available, BeamStatus::Claimed, std::string(client_id), 0});
  });
  return claimed;
}

namespace {

BeamRecord &claimed_by(QueueDatabase &db, std::string_view beam_id, std::string_view client_id) {
  BeamRecord *r = db.find(beam_id);
  if (!r) {
    throw Error(ErrorCode::UnknownBeam, "no beam " + std::string(beam_id));
  }
  if (r->status != BeamStatus::Claimed || r->claimant != client_id) {
    throw Error(ErrorCode::NotClaimant, std::string(beam_id) + " is " + std::string(to_string(r->status)) +
                                            " by " + r->claimant + ", not claimed by " +
                                            std::string(client_id));
  }
  return *r;
}

} // namespace

void WorkQueue::mark_done(std::string_view client_id, std::string_view beam_id, std::string_view results_path) {
  std::int64_t finished = 0;
  mutate(
      client_id,
      [&](QueueDatabase &db, std::vector<Transition> &tr) {
        BeamRecord &r = claimed_by(db, beam_id, client_id);
        r.status = BeamStatus::Done;
        r.finished_at = finished = std::max(now(), r.claimed_at);
        tr.push_back({0, {}, r.beam_id, BeamStatus::Claimed, BeamStatus::Done, std::string(client_id), 0});
      },
      [&] {
        detail::append_to_file(dir_ / "results.manifest",
                               std::string(beam_id) + " " + one_line(results_path) + " " +
                                   std::string(client_id) + " " + std::to_string(finished) + "\n");
      });
}

void WorkQueue::mark_failed(std::string_view client_id, std::string_view beam_id, std::string_view reason) {
  std::int64_t finished = 0;
  mutate(
      client_id,
      [&](QueueDatabase &db, std::vector<Transition> &tr) {
        BeamRecord &r = claimed_by(db, beam_id, client_id);
        r.status = BeamStatus::Failed;
        r.finished_at = finished = std::max(now(), r.claimed_at);
        tr.push_back({0, {}, r.beam_id, BeamStatus::Claimed, BeamStatus::Failed, std::string(client_id), 0});
      },
      [&] {
        detail::append_to_file(dir_ / "failures.log", std::to_string(finished) + " " + std::string(beam_id) +
                                                          " " + std::string(client_id) + " " +
                                                          one_line(reason) + "\n");
      });
}

std::size_t WorkQueue::requeue_stale(std::int64_t stale_secs) {
  if (stale_secs < 0) {
    throw Error(ErrorCode::InvalidParams, "stale_secs must be >= 0");
  }
  std::size_t n = 0;
  mutate("requeue", [&](QueueDatabase &db, std::vector<Transition> &tr) {
    const std::int64_t t_now = now();
    for (auto &r : db.records) {
      if (r.status != BeamStatus::Claimed) continue;
      std::int64_t heartbeat = r.claimed_at;
      if (auto st = read_status(r.claimant)) {
        heartbeat = std::max(heartbeat, st->heartbeat);
      }
      if (t_now - heartbeat < stale_secs) continue;
      tr.push_back({0, {}, r.beam_id, BeamStatus::Claimed, BeamStatus::Available, r.claimant, 0});
      r.status = BeamStatus::Available;
      r.claimant = "-";
      r.claimed_at = 0;
      r.finished_at = 0;
      ++n;
    }
  });
  return n;
}

std::size_t WorkQueue::requeue_failed(std::uint32_t max_attempts, bool all) {
  std::size_t n = 0;
  mutate("requeue", [&](QueueDatabase &db, std::vector<Transition> &tr) {
    for (auto &r : db.records) {
      if (r.status != BeamStatus::Failed || (!all && r.attempts >= max_attempts)) continue;
      tr.push_back({0, {}, r.beam_id, BeamStatus::Failed, BeamStatus::Available, "requeue", 0});
      r.status = BeamStatus::Available;
      r.claimant = "-";
      r.claimed_at = 0;
      r.finished_at = 0;
      ++n;
    }
  });
  return n;
}

// ---- control and client files ---------------------------------------------

Command WorkQueue::read_control(std::string_view client_id) const {
  if (is_safe_client_id(client_id)) {
    if (auto text = detail::read_file_if_exists(dir_ / ("CONTROL." + std::string(client_id)))) {
      return parse_command(*text);
    }
  }
  if (auto text = detail::read_file_if_exists(dir_ / "CONTROL")) {
    return parse_command(*text);
  }
  return Command::Run;
}

void WorkQueue::write_control(Command c, std::optional<std::string> client_id) {
  fs::path path = dir_ / "CONTROL";
  if (client_id) {
    if (!is_safe_client_id(*client_id)) {
      throw Error(ErrorCode::InvalidParams, "unusable client id '" + *client_id + "'");
    }
    path = dir_ / ("CONTROL." + *client_id);
  }
  detail::write_file_atomic(path, std::string(to_string(c)) + "\n");
}

void WorkQueue::write_status(const ClientStatus &status) {
  if (!is_safe_client_id(status.client_id)) {
    throw Error(ErrorCode::InvalidParams, "unusable client id '" + status.client_id + "'");
  }
  std::error_code ec;
  fs::create_directories(clients_dir(), ec);
  detail::write_file_atomic(clients_dir() / (status.client_id + ".status"),
                            std::string(to_string(status.phase)) + " " + status.current_beam + " " +
                                std::to_string(status.heartbeat) + " " + std::to_string(status.trials_done) +
                                "\n");
}

std::optional<ClientStatus> WorkQueue::read_status(std::string_view client_id) const {
  if (!is_safe_client_id(client_id)) return std::nullopt;
  const auto text = detail::read_file_if_exists(clients_dir() / (std::string(client_id) + ".status"));
  if (!text) return std::nullopt;
  const auto w = words(trim(*text));
  if (w.size() != 4) {
    throw Error(ErrorCode::ParseError, "bad status file for " + std::string(client_id));
  }
  ClientStatus st;
  st.client_id = std::string(client_id);
  st.phase = parse_client_phase(w[0]);
  st.current_beam = std::string(w[1]);
  st.heartbeat = require_int<std::int64_t>(w[2], "heartbeat");
  st.trials_done = require_int<std::uint64_t>(w[3], "trials_done");
  return st;
}

void WorkQueue::append_log(std::string_view client_id, std::string_view message) {
  std::error_code ec;
  fs::create_directories(clients_dir(), ec);
  detail::append_to_file(clients_dir() / (std::string(client_id) + ".log"),
                         std::to_string(now()) + " " + one_line(message) + "\n");
}

void WorkQueue::append_timing(std::string_view client_id, std::string_view line) {
  std::error_code ec;
  fs::create_directories(clients_dir(), ec);
  detail::append_to_file(clients_dir() / (std::string(client_id) + ".timing"), one_line(line) + "\n");
}

// ---- monitoring ------------------------------------------------------------

MonitorSnapshot WorkQueue::snapshot() const {
  MonitorSnapshot snap;
  const QueueDatabase db = read();
  snap.version = db.version;
  snap.total = db.records.size();
  for (auto s : {BeamStatus::Available, BeamStatus::Claimed, BeamStatus::Done, BeamStatus::Failed}) {
    snap.counts[s] = db.count(s);
  }
  const std::int64_t t_now = now();
  std::error_code ec;
  std::set<std::string> ids;
  for (const auto &entry : fs::directory_iterator(clients_dir(), ec)) {
    if (entry.path().extension() == ".status") ids.insert(entry.path().stem().string());
  }
  for (const auto &id : ids) {
    if (auto st = read_status(id)) {
      snap.clients.push_back({*st, t_now - st->heartbeat});
    }
  }
  std::int64_t first = 0, last = 0;
  std::size_t done = 0;
  for (const auto &r : db.records) {
    if (r.status != BeamStatus::Done) continue;
    first = done == 0 ? r.claimed_at : std::min(first, r.claimed_at);
    last = done == 0 ? r.finished_at : std::max(last, r.finished_at);
    ++done;
  }
  if (done > 0 && last > first) {
    const double rate = static_cast<double>(done) / static_cast<double>(last - first);
    snap.rate_beams_per_s = rate;
    const std::size_t remaining = snap.counts[BeamStatus::Available] + snap.counts[BeamStatus::Claimed];
    snap.eta_s = static_cast<double>(remaining) / rate;
  }
  return snap;
}

std::string format_snapshot(const MonitorSnapshot &snap) {
  std::ostringstream out;
  out << "version " << snap.version << ", " << snap.total << " beams\n";
  for (const auto &[status, n] : snap.counts) {
    out << "  " << to_string(status) << ' ' << n << '\n';
  }
  if (snap.rate_beams_per_s && snap.eta_s) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "rate %.3f beams/min, eta %.1f min\n", *snap.rate_beams_per_s * 60.0,
                  *snap.eta_s / 60.0);
    out << buf;
  } else {
    out << "rate -, eta -\n";
  }
  for (const auto &c : snap.clients) {
    out << "  " << c.status.client_id << ' ' << to_string(c.status.phase) << ' ' << c.status.current_beam
        << " trials=" << c.status.trials_done << " heartbeat_age=" << c.heartbeat_age_s << "s\n";
  }
  return out.str();
}

} // namespace beamforge
