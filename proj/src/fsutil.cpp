#include "fsutil.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "beamforge/error.hpp"

namespace beamforge::detail {

namespace {

[[noreturn]] void throw_errno(const std::string &what, const std::filesystem::path &path) {
  throw Error(ErrorCode::IoError, what + " " + path.string() + ": " + std::strerror(errno));
}

void write_all(int fd, std::string_view content, const std::filesystem::path &path) {
  const char *p = content.data();
  std::size_t left = content.size();
  while (left > 0) {
    const ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int saved = errno;
      ::close(fd);
      errno = saved;
      throw_errno("write", path);
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
}

} // namespace

std::optional<std::string> read_file_if_exists(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (errno == ENOENT) return std::nullopt;
    throw_errno("open", path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

std::string read_file(const std::filesystem::path &path) {
  auto text = read_file_if_exists(path);
  if (!text) {
    throw Error(ErrorCode::IoError, "missing file " + path.string());
  }
  return *text;
}

void write_file_atomic(const std::filesystem::path &path, std::string_view content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + random_hex(8);
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0644);
  if (fd < 0) throw_errno("create", tmp);
  write_all(fd, content, tmp);
  if (::fsync(fd) != 0 || ::close(fd) != 0) {
    throw_errno("sync", tmp);
  }
  if (::rename(tmp.c_str(), path.c_str()) != 0) {
    const int saved = errno;
    ::unlink(tmp.c_str());
    errno = saved;
    throw_errno("rename onto", path);
  }
}

void append_to_file(const std::filesystem::path &path, std::string_view content) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw_errno("open", path);
  write_all(fd, content, path);
  if (::close(fd) != 0) throw_errno("close", path);
}

std::string random_hex(std::size_t n_chars) {
  // Reseeded after fork so parent and child never share a nonce stream.
  thread_local pid_t seeded_pid = -1;
  thread_local std::mt19937_64 rng;
  if (seeded_pid != ::getpid()) {
    seeded_pid = ::getpid();
    std::random_device rd;
    std::seed_seq seq{rd(), rd(), rd(), rd(), static_cast<unsigned>(seeded_pid)};
    rng.seed(seq);
  }
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(n_chars, '0');
  for (char &c : out) {
    c = digits[rng() & 0xF];
  }
  return out;
}

std::string host_name() {
  char buf[256] = {};
  if (::gethostname(buf, sizeof buf - 1) != 0) {
    return "unknown";
  }
  return buf;
}

} // namespace beamforge::detail
