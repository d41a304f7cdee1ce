#include "beamforge/clustersim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <queue>
#include <sstream>

#include "beamforge/error.hpp"

namespace beamforge {

namespace {

using Micros = std::int64_t;

Micros to_us(double s) { return static_cast<Micros>(std::llround(s * 1e6)); }
double to_s(Micros us) { return static_cast<double>(us) * 1e-6; }

const char *kCsvHeader = "name,download_s,decimate_s,sc_td_s,filterbank_s,hunt_trial_s,best_s,n_trials";

// Counts pairs of half-open intervals that intersect.
std::size_t count_overlaps(std::vector<std::pair<double, double>> iv) {
  std::sort(iv.begin(), iv.end());
  std::priority_queue<double, std::vector<double>, std::greater<>> ends;
  std::size_t pairs = 0;
  for (const auto &[start, end] : iv) {
    while (!ends.empty() && ends.top() <= start) ends.pop();
    pairs += ends.size();
    ends.push(end);
  }
  return pairs;
}

double union_length(std::vector<std::pair<double, double>> iv) {
  std::sort(iv.begin(), iv.end());
  double total = 0.0, cur_start = 0.0, cur_end = -std::numeric_limits<double>::infinity();
  for (const auto &[s, e] : iv) {
    if (s > cur_end) {
      if (std::isfinite(cur_end)) total += cur_end - cur_start;
      cur_start = s;
      cur_end = e;
    } else {
      cur_end = std::max(cur_end, e);
    }
  }
  if (std::isfinite(cur_end)) total += cur_end - cur_start;
  return total;
}

// Machine with the earliest ready time; ties go to the lower index.
std::size_t next_machine(const std::vector<double> &ready) {
  return static_cast<std::size_t>(std::min_element(ready.begin(), ready.end()) - ready.begin());
}

void simulate_staggered(const std::vector<MachineProfile> &profiles, std::size_t n_beams, SimResult &res) {
  const std::size_t m = profiles.size();
  std::vector<Micros> ready(m, 0);
  Micros link_free = 0;
  for (std::size_t b = 0; b < n_beams; ++b) {
    const std::size_t i =
        static_cast<std::size_t>(std::min_element(ready.begin(), ready.end()) - ready.begin());
    const Micros claim = ready[i];
    const Micros dl_start = std::max(claim, link_free);
    const Micros dl_end = dl_start + to_us(profiles[i].download_s);
    link_free = dl_end;
    const Micros done = dl_end + to_us(profiles[i].compute_s());
    ready[i] = done;
    res.events.push_back({b, i, to_s(claim), to_s(dl_start), to_s(dl_end), to_s(done)});
  }
}

// Without staggering every download starts at claim time and the active
// downloads split the link equally (processor sharing).
void simulate_shared_link(const std::vector<MachineProfile> &profiles, std::size_t n_beams, SimResult &res) {
  const std::size_t m = profiles.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> ready(m, 0.0);      // when the machine next claims; inf while busy
  std::vector<double> compute_end(m, inf); // end of the compute phase in progress
  std::vector<double> remaining(m, 0.0);  // download work left, in seconds at full rate
  std::vector<bool> downloading(m, false);
  std::vector<SimEvent> current(m);
  std::size_t claimed = 0;
  double now = 0.0;
  for (;;) {
    std::size_t active = 0;
    for (std::size_t i = 0; i < m; ++i) active += downloading[i];
    // Claims happen instantly at the current time.
    bool claimed_any = false;
    while (claimed < n_beams) {
      const std::size_t i = next_machine(ready);
      if (ready[i] > now) break;
      current[i] = {claimed++, i, now, now, 0.0, 0.0};
      remaining[i] = profiles[i].download_s;
      downloading[i] = true;
      ready[i] = inf;
      claimed_any = true;
    }
    if (claimed_any) continue;
    if (active == 0) {
      // Idle link: jump to the next compute end or claim.
      double t = inf;
      for (std::size_t i = 0; i < m; ++i) t = std::min({t, compute_end[i], claimed < n_beams ? ready[i] : inf});
      if (!std::isfinite(t)) break;
      now = t;
    } else {
      double t = inf;
      for (std::size_t i = 0; i < m; ++i) {
        if (downloading[i]) t = std::min(t, now + remaining[i] * static_cast<double>(active));
        t = std::min({t, compute_end[i], claimed < n_beams ? ready[i] : inf});
      }
      const double progress = (t - now) / static_cast<double>(active);
      for (std::size_t i = 0; i < m; ++i) {
        if (downloading[i]) remaining[i] -= progress;
      }
      now = t;
    }
    for (std::size_t i = 0; i < m; ++i) {
      if (downloading[i] && remaining[i] <= 1e-9) {
        downloading[i] = false;
        current[i].download_end_s = now;
        compute_end[i] = now + profiles[i].compute_s();
      }
      if (compute_end[i] <= now) {
        current[i].done_s = compute_end[i];
        res.events.push_back(current[i]);
        compute_end[i] = inf;
        ready[i] = now;
      }
    }
  }
  std::sort(res.events.begin(), res.events.end(),
            [](const SimEvent &a, const SimEvent &b) { return a.beam < b.beam; });
}

} // namespace

void MachineProfile::validate() const {
  const bool ok = download_s > 0.0 && decimate_s >= 0.0 && sc_td_s >= 0.0 && filterbank_s >= 0.0 &&
                  hunt_trial_s >= 0.0 && best_s >= 0.0 && std::isfinite(total_s());
  if (!ok) {
    throw Error(ErrorCode::InvalidParams, "profile " + name + ": download must be > 0, other stages >= 0");
  }
}

double MachineProfile::compute_s() const {
  return decimate_s + sc_td_s + filterbank_s + static_cast<double>(n_trials) * hunt_trial_s + best_s;
}

std::vector<MachineProfile> table1_profiles() {
  return {
      {"client0", 44.5, 281.7, 514.9, 55.7, 11.3, 12.3, 450},
      {"client1", 40.6, 282.4, 513.8, 49.8, 11.4, 12.9, 450},
      {"client2", 33.2, 282.9, 512.9, 41.6, 11.4, 12.7, 450},
      {"client3", 31.4, 298.2, 545.9, 53.6, 12.1, 13.1, 450},
      {"client4", 33.9, 284.7, 514.8, 55.5, 11.4, 12.6, 450},
      {"client5", 36.7, 66.4, 154.7, 19.5, 3.2, 3.6, 450},
      {"client6", 35.9, 295.8, 539.3, 54.4, 12.1, 13.3, 450},
  };
}

std::vector<double> table1_reported_totals_min() { return {99.9, 100.3, 100.4, 106.7, 100.8, 28.3, 106.5}; }

std::vector<MachineProfile> read_profiles_csv(std::istream &in) {
  std::vector<MachineProfile> out;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      if (line.rfind("name,", 0) == 0) continue;
    }
    std::istringstream ss(line);
    std::vector<std::string> f;
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 8) {
      throw Error(ErrorCode::ParseError, "profile row needs 8 columns: " + line);
    }
    MachineProfile p;
    p.name = f[0];
    try {
      std::size_t used = 0;
      auto num = [&used](const std::string &s) {
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
      };
      p.download_s = num(f[1]);
      p.decimate_s = num(f[2]);
      p.sc_td_s = num(f[3]);
      p.filterbank_s = num(f[4]);
      p.hunt_trial_s = num(f[5]);
      p.best_s = num(f[6]);
      p.n_trials = static_cast<std::size_t>(std::stoul(f[7], &used));
      if (used != f[7].size()) throw std::invalid_argument(f[7]);
    } catch (const std::logic_error &) {
      throw Error(ErrorCode::ParseError, "bad number in profile row: " + line);
    }
    p.validate();
    out.push_back(p);
  }
  return out;
}

void write_profiles_csv(const std::vector<MachineProfile> &profiles, std::ostream &out) {
  out << kCsvHeader << '\n';
  for (const auto &p : profiles) {
    out << p.name << ',' << p.download_s << ',' << p.decimate_s << ',' << p.sc_td_s << ',' << p.filterbank_s << ','
        << p.hunt_trial_s << ',' << p.best_s << ',' << p.n_trials << '\n';
  }
}

std::size_t SimResult::total_beams() const {
  std::size_t n = 0;
  for (auto b : beams_per_machine) n += b;
  return n;
}

double SimResult::aggregate_rate_per_min() const {
  double rate = 0.0;
  for (std::size_t i = 0; i < beams_per_machine.size(); ++i) {
    if (beams_per_machine[i] > 0 && last_completion_s[i] > 0.0) {
      rate += static_cast<double>(beams_per_machine[i]) / (last_completion_s[i] / 60.0);
    }
  }
  return rate;
}

double SimResult::makespan_rate_per_min() const {
  return makespan_s > 0.0 ? static_cast<double>(total_beams()) / (makespan_s / 60.0) : 0.0;
}

double rate_sum_per_min(const std::vector<MachineProfile> &profiles) {
  double rate = 0.0;
  for (const auto &p : profiles) rate += 1.0 / p.total_min();
  return rate;
}

SimResult simulate(const std::vector<MachineProfile> &profiles, std::size_t n_beams, bool stagger) {
  if (profiles.empty() || n_beams == 0) {
    throw Error(ErrorCode::InvalidParams, "need at least one machine and one beam");
  }
  for (const auto &p : profiles) p.validate();
  SimResult res;
  res.events.reserve(n_beams);
  if (stagger) {
    simulate_staggered(profiles, n_beams, res);
  } else {
    simulate_shared_link(profiles, n_beams, res);
  }
  res.beams_per_machine.assign(profiles.size(), 0);
  res.last_completion_s.assign(profiles.size(), 0.0);
  std::vector<std::pair<double, double>> downloads;
  downloads.reserve(res.events.size());
  for (const auto &e : res.events) {
    res.beams_per_machine[e.machine] += 1;
    res.last_completion_s[e.machine] = std::max(res.last_completion_s[e.machine], e.done_s);
    res.makespan_s = std::max(res.makespan_s, e.done_s);
    downloads.emplace_back(e.download_start_s, e.download_end_s);
  }
  res.download_overlaps = count_overlaps(downloads);
  res.link_busy_fraction = res.makespan_s > 0.0 ? union_length(downloads) / res.makespan_s : 0.0;
  return res;
}

double parallel_efficiency(const SimResult &result, const std::vector<MachineProfile> &profiles) {
  return result.makespan_rate_per_min() / rate_sum_per_min(profiles);
}

double download_fraction(const MachineProfile &profile) {
  profile.validate();
  return profile.download_s / profile.total_s();
}

std::size_t saturation_point(const MachineProfile &profile, double link_mb_per_s, double beam_mb) {
  if (!(link_mb_per_s > 0.0) || !(beam_mb > 0.0)) {
    throw Error(ErrorCode::InvalidParams, "link rate and beam size must be > 0");
  }
  profile.validate();
  const double download = beam_mb / link_mb_per_s;
  const double ratio = profile.compute_s() / download;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(ratio - 1e-9)));
}

void write_events_csv(const SimResult &result, std::ostream &out) {
  out << "beam,machine,claim_s,download_start_s,download_end_s,done_s\n";
  char line[160];
  for (const auto &e : result.events) {
    std::snprintf(line, sizeof line, "%zu,%zu,%.6f,%.6f,%.6f,%.6f\n", e.beam, e.machine, e.claim_s,
                  e.download_start_s, e.download_end_s, e.done_s);
    out << line;
  }
}

void write_summary(const SimResult &result, const std::vector<MachineProfile> &profiles, std::ostream &out) {
  char line[200];
  std::snprintf(line, sizeof line, "beams %zu  makespan %.1f min (%.2f days)\n", result.total_beams(),
                result.makespan_s / 60.0, result.makespan_s / 86400.0);
  out << line;
  std::snprintf(line, sizeof line, "rate %.4f beams/min (ideal %.4f), efficiency %.4f\n",
                result.makespan_rate_per_min(), rate_sum_per_min(profiles), parallel_efficiency(result, profiles));
  out << line;
  std::snprintf(line, sizeof line, "link busy %.4f, overlapping downloads %zu\n", result.link_busy_fraction,
                result.download_overlaps);
  out << line;
  out << "machine        beams  min/beam  download%\n";
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    std::snprintf(line, sizeof line, "%-12s %7zu %9.2f %10.2f\n", profiles[i].name.c_str(),
                  result.beams_per_machine[i], profiles[i].total_min(), 100.0 * download_fraction(profiles[i]));
    out << line;
  }
}

} // namespace beamforge
