#include "beamforge/config.hpp"

#include <charconv>
#include <cstdlib>
#include <functional>
#include <map>

#include "beamforge/error.hpp"
#include "fsutil.hpp"

namespace beamforge {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw Error(ErrorCode::ParseError, std::string(key) + ": not a number: '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw Error(ErrorCode::ParseError, std::string(key) + ": not a count: '" + std::string(v) + "'");
  }
  return out;
}

using Setter = std::function<void(GlobalConfig &, std::string_view, std::string_view)>;

void add_media(std::map<std::string, Setter, std::less<>> &m, const std::string &prefix,
               MediaSpec GlobalConfig::*media) {
  m[prefix + ".capacity_gb"] = [media](GlobalConfig &c, auto k, auto v) { (c.*media).capacity_gb = to_double(k, v); };
  m[prefix + ".unit_cost"] = [media](GlobalConfig &c, auto k, auto v) { (c.*media).unit_cost = to_double(k, v); };
  m[prefix + ".writer_cost"] = [media](GlobalConfig &c, auto k, auto v) { (c.*media).writer_cost = to_double(k, v); };
  m[prefix + ".other_costs"] = [media](GlobalConfig &c, auto k, auto v) { (c.*media).other_costs = to_double(k, v); };
}

const std::map<std::string, Setter, std::less<>> &setters() {
  static const auto table = [] {
    std::map<std::string, Setter, std::less<>> m;
    m["shared_dir"] = [](GlobalConfig &c, auto, auto v) { c.shared_dir = std::string(v); };
    m["scratch_dir"] = [](GlobalConfig &c, auto, auto v) { c.scratch_dir = std::string(v); };
    m["n_channels"] = [](GlobalConfig &c, auto k, auto v) {
      c.observation.n_channels = static_cast<std::uint32_t>(to_uint(k, v));
    };
    m["channel_bw_mhz"] = [](GlobalConfig &c, auto k, auto v) { c.observation.channel_bw_mhz = to_double(k, v); };
    m["f_top_mhz"] = [](GlobalConfig &c, auto k, auto v) { c.observation.f_top_mhz = to_double(k, v); };
    m["t_samp_ms"] = [](GlobalConfig &c, auto k, auto v) { c.observation.t_samp_ms = to_double(k, v); };
    m["n_samples"] = [](GlobalConfig &c, auto k, auto v) { c.observation.n_samples = to_uint(k, v); };
    m["n_trials"] = [](GlobalConfig &c, auto k, auto v) { c.n_trials = to_uint(k, v); };
    m["dm_min"] = [](GlobalConfig &c, auto k, auto v) { c.dm_min = to_double(k, v); };
    m["dm_max"] = [](GlobalConfig &c, auto k, auto v) { c.dm_max = to_double(k, v); };
    add_media(m, "dvd", &GlobalConfig::dvd);
    add_media(m, "dlt", &GlobalConfig::dlt);
    return m;
  }();
  return table;
}

} // namespace

void GlobalConfig::set(std::string_view key, std::string_view value) {
  const auto it = setters().find(key);
  if (it == setters().end()) {
    throw Error(ErrorCode::ParseError, "unknown config key '" + std::string(key) + "'");
  }
  it->second(*this, key, value);
}

GlobalConfig GlobalConfig::parse(std::string_view text) {
  GlobalConfig cfg;
  if (const char *env = std::getenv("BEAMFORGE_SHARED"); env && *env) {
    cfg.shared_dir = env;
  }
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected key = value");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const Error &e) {
      throw Error(e.code(), "line " + std::to_string(line_no) + ": " + e.message());
    }
  }
  cfg.observation.validate();
  cfg.dvd.validate();
  cfg.dlt.validate();
  return cfg;
}

GlobalConfig GlobalConfig::load(const std::filesystem::path &path) { return parse(detail::read_file(path)); }

} // namespace beamforge
