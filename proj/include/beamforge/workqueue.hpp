#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace beamforge {

/// Epoch seconds source; injectable so staleness rules can be tested.
using Clock = std::function<std::int64_t()>;
std::int64_t system_epoch_seconds();

/// Called with a named point in the protocol ("claim.locked", ...). Tests
/// use it to inject crashes; production code leaves it empty.
using FaultHook = std::function<void(std::string_view)>;

enum class BeamStatus { Available, Claimed, Done, Failed };
std::string_view to_string(BeamStatus s);
BeamStatus parse_beam_status(std::string_view word);

struct BeamRecord {
  std::string beam_id;
  BeamStatus status = BeamStatus::Available;
  std::string data_path;
  std::string claimant = "-";
  std::int64_t claimed_at = 0;
  std::int64_t finished_at = 0;
  std::uint32_t attempts = 0;

  friend bool operator==(const BeamRecord &, const BeamRecord &) = default;
};

struct QueueDatabase {
  std::uint64_t version = 0;
  std::vector<BeamRecord> records;

  static QueueDatabase parse(std::string_view text);
  std::string serialize() const;

  const BeamRecord *find(std::string_view beam_id) const;
  BeamRecord *find(std::string_view beam_id);
  std::size_t count(BeamStatus s) const;

  friend bool operator==(const QueueDatabase &, const QueueDatabase &) = default;
};

enum class Command { Run, Pause, Stop };
std::string_view to_string(Command c);
Command parse_command(std::string_view text);

enum class ClientPhase { Idle, Download, Decimate, Convert, Hunt, Best, Upload };
std::string_view to_string(ClientPhase p);
ClientPhase parse_client_phase(std::string_view word);

struct ClientStatus {
  std::string client_id;
  std::string current_beam = "-";
  ClientPhase phase = ClientPhase::Idle;
  std::int64_t heartbeat = 0;
  std::uint64_t trials_done = 0;
};

struct LockOwner {
  std::string client_id;
  std::int64_t epoch = 0;
  std::string nonce;
  std::string host;
  long pid = 0;

  std::string serialize() const;
  static std::optional<LockOwner> parse(std::string_view text);
};

struct LockFileOptions {
  double timeout_s = 30.0;
  std::int64_t stale_secs = 300;
  double poll_s = 0.002;
  Clock clock;
};

/// Exclusive-create lock file. A lock older than `stale_secs`, or one whose
/// holder is a dead process on this host, is renamed to
/// `<name>.stale.<epoch>` and the create retried.
class LockFile {
public:
  static LockFile acquire(const std::filesystem::path &path, std::string_view owner_id,
                          const LockFileOptions &opts);
  static std::optional<LockFile> try_acquire(const std::filesystem::path &path,
                                             std::string_view owner_id,
                                             const LockFileOptions &opts);

  LockFile(LockFile &&other) noexcept;
  LockFile &operator=(LockFile &&other) noexcept;
  LockFile(const LockFile &) = delete;
  LockFile &operator=(const LockFile &) = delete;
  ~LockFile();

  /// Re-reads the lock file; throws LockStolen unless it still carries our nonce.
  void verify() const;
  void release();
  bool held() const { return held_; }
  const std::string &nonce() const { return nonce_; }
  const std::filesystem::path &path() const { return path_; }

private:
  LockFile(std::filesystem::path path, std::string nonce)
      : path_(std::move(path)), nonce_(std::move(nonce)), held_(true) {}

  std::filesystem::path path_;
  std::string nonce_;
  bool held_ = false;
};

/// Holder of all three database locks: `db.lock` (exclusive create),
/// an advisory flock on `db.flock`, and nonce verification before writes.
class LockToken {
public:
  LockToken(LockFile file, int flock_fd) : file_(std::move(file)), fd_(flock_fd) {}
  LockToken(LockToken &&other) noexcept;
  LockToken &operator=(LockToken &&other) noexcept;
  LockToken(const LockToken &) = delete;
  LockToken &operator=(const LockToken &) = delete;
  ~LockToken();

  void verify() const { file_.verify(); }
  void release();
  bool held() const { return file_.held(); }
  const std::string &nonce() const { return file_.nonce(); }

private:
  LockFile file_;
  int fd_ = -1;
};

struct QueueOptions {
  double lock_timeout_s = 30.0;
  std::int64_t lock_stale_secs = 300;
  Clock clock;
  FaultHook fault_hook;
};

struct ClientView {
  ClientStatus status;
  std::int64_t heartbeat_age_s = 0;
};

struct MonitorSnapshot {
  std::uint64_t version = 0;
  std::size_t total = 0;
  std::map<BeamStatus, std::size_t> counts;
  std::vector<ClientView> clients;
  std::optional<double> rate_beams_per_s;
  std::optional<double> eta_s;
};

std::string format_snapshot(const MonitorSnapshot &snap);

/// One line of `db.journal`: a record transition committed as `version`.
struct Transition {
  std::uint64_t version = 0;
  std::string writer; // nonce of the lock holder that wrote the line
  std::string beam_id;
  BeamStatus from = BeamStatus::Available;
  BeamStatus to = BeamStatus::Available;
  std::string client_id;
  std::int64_t epoch = 0;
};

std::vector<Transition> read_journal(const std::filesystem::path &shared_dir);
/// Keeps only the transitions of committed versions: the last writer of each
/// version number wins, so a writer that died before renaming is dropped.
/// Versions above `db_version` were never committed.
std::vector<Transition> committed_transitions(const std::vector<Transition> &journal,
                                              std::uint64_t db_version);

/// Handle on the shared queue directory. One handle per worker thread.
class WorkQueue {
public:
  explicit WorkQueue(std::filesystem::path shared_dir, QueueOptions opts = {});

  const std::filesystem::path &shared_dir() const { return dir_; }
  std::filesystem::path db_path() const { return dir_ / "beams.db"; }
  std::filesystem::path clients_dir() const { return dir_ / "clients"; }
  std::filesystem::path results_dir() const { return dir_ / "results"; }

  QueueDatabase init(const std::vector<std::pair<std::string, std::string>> &beams);
  QueueDatabase read() const;

  LockToken acquire_lock(std::string_view client_id) const;

  BeamRecord claim_next(std::string_view client_id);
  void mark_done(std::string_view client_id, std::string_view beam_id,
                 std::string_view results_path);
  void mark_failed(std::string_view client_id, std::string_view beam_id,
                   std::string_view reason);
  std::size_t requeue_stale(std::int64_t stale_secs);
  /// FAILED -> AVAILABLE for beams with fewer than `max_attempts` attempts,
  /// or for every failed beam when `all` is set.
  std::size_t requeue_failed(std::uint32_t max_attempts = 3, bool all = false);

  Command read_control(std::string_view client_id) const;
  void write_control(Command c, std::optional<std::string> client_id = std::nullopt);

  void write_status(const ClientStatus &status);
  std::optional<ClientStatus> read_status(std::string_view client_id) const;
  void append_log(std::string_view client_id, std::string_view message);
  void append_timing(std::string_view client_id, std::string_view line);

  MonitorSnapshot snapshot() const;

  std::int64_t now() const;

private:
  // Runs `fn(db, transitions)` under the lock and commits if it recorded any
  // transition; `after` runs once the new version is in place, still locked.
  template <typename Fn>
  void mutate(std::string_view client_id, Fn &&fn, const std::function<void()> &after = {});
  void hook(std::string_view point) const;

  std::filesystem::path dir_;
  QueueOptions opts_;
};

bool is_safe_client_id(std::string_view id);

} // namespace beamforge
