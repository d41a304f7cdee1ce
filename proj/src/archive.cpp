#include "beamforge/archive.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <tuple>

#include "beamforge/error.hpp"

namespace beamforge {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double wrap_360(double deg) {
  double x = std::fmod(deg, 360.0);
  if (x < 0.0) x += 360.0;
  return x >= 360.0 ? 0.0 : x;
}

std::string csv_field(const std::string &s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string html_escape(const std::string &s) {
  std::string out;
  for (char c : s) {
    switch (c) {
    case '&': out += "&amp;"; break;
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '"': out += "&quot;"; break;
    default: out += c;
    }
  }
  return out;
}

std::string fmt(const char *f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// 13-beam multibeam footprint: centre, a ring of six, and an outer ring
// of six rotated by 30 degrees. Offsets in degrees.
constexpr double kBeamSpacingDeg = 29.1 / 60.0;

} // namespace

void MediaSpec::validate() const {
  if (!(capacity_gb > 0.0) || !(unit_cost >= 0.0) || !(writer_cost >= 0.0) || !(other_costs >= 0.0)) {
    throw Error(ErrorCode::InvalidParams, "media " + name + ": capacity must be > 0 and costs >= 0");
  }
}

std::uint64_t MediaSpec::capacity_bytes() const { return static_cast<std::uint64_t>(std::llround(capacity_gb * 1e9)); }

MediaSpec dvd_june2003() { return {"DVD", "discs", 4.7, 1.36, 400.0, 45.0}; }
MediaSpec dlt_iv_june2003() { return {"DLT-IV", "tapes", 35.0, 65.0, 2300.0, 0.0}; }

std::vector<DiscManifest> plan_discs(const std::vector<PointingMeta> &pointings, const MediaSpec &media) {
  media.validate();
  std::vector<DiscManifest> out;
  out.reserve(pointings.size());
  const std::uint64_t capacity = media.capacity_bytes();
  for (const auto &p : pointings) {
    p.validate();
    const std::uint64_t bytes = p.payload_bytes();
    if (bytes > capacity) {
      throw Error(ErrorCode::PointingTooLarge, "pointing " + p.pointing_id + " needs " + std::to_string(bytes) +
                                                   " bytes, " + media.name + " holds " + std::to_string(capacity));
    }
    char id[32];
    std::snprintf(id, sizeof id, "%s-%04zu", media.name.c_str(), out.size() + 1);
    out.push_back({id, p, bytes, static_cast<double>(bytes) / static_cast<double>(capacity)});
  }
  return out;
}

CostReport cost_report(double total_data_gb, std::size_t n_units, const MediaSpec &media) {
  media.validate();
  if (!(total_data_gb > 0.0) || n_units == 0) {
    throw Error(ErrorCode::InvalidParams, "data volume and unit count must be positive");
  }
  CostReport r;
  r.media = media;
  r.n_units = n_units;
  r.total_data_gb = total_data_gb;
  const double units = static_cast<double>(n_units);
  r.cost_per_gb_max = media.unit_cost / media.capacity_gb;
  r.cost_per_gb_actual = units * media.unit_cost / total_data_gb;
  r.fill_fraction = total_data_gb / (units * media.capacity_gb);
  r.total_cost = units * media.unit_cost + media.writer_cost + media.other_costs;
  return r;
}

std::string render_cost_table(const CostReport &a, const CostReport &b) {
  std::ostringstream out;
  out << "item\t" << a.media.name << '\t' << b.media.name << '\t' << a.media.name << '/' << b.media.name << '\n';
  auto row = [&](const char *name, double x, double y, const char *f) {
    out << name << '\t' << fmt(f, x) << '\t' << fmt(f, y) << '\t';
    out << (y != 0.0 ? fmt("%.2f", x / y) : std::string("-")) << '\n';
  };
  row("n_units", static_cast<double>(a.n_units), static_cast<double>(b.n_units), "%.0f");
  row("unit_cost_usd", a.media.unit_cost, b.media.unit_cost, "%.2f");
  row("writer_cost_usd", a.media.writer_cost, b.media.writer_cost, "%.2f");
  row("other_costs_usd", a.media.other_costs, b.media.other_costs, "%.2f");
  row("capacity_gb", a.media.capacity_gb, b.media.capacity_gb, "%.1f");
  row("fill_fraction", a.fill_fraction, b.fill_fraction, "%.2f");
  row("cost_per_gb_max", a.cost_per_gb_max, b.cost_per_gb_max, "%.2f");
  row("cost_per_gb_actual", a.cost_per_gb_actual, b.cost_per_gb_actual, "%.2f");
  row("total_cost_usd", a.total_cost, b.total_cost, "%.2f");
  return out.str();
}

std::string format_ra_hms(double ra_deg) {
  constexpr long long kDay = 24LL * 3600 * 100;
  long long cs = std::llround(wrap_360(ra_deg) / 15.0 * 3600.0 * 100.0) % kDay;
  const long long h = cs / 360000;
  cs %= 360000;
  const long long m = cs / 6000;
  cs %= 6000;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%02lld:%02lld:%02lld.%02lld", h, m, cs / 100, cs % 100);
  return buf;
}

std::string format_dec_dms(double dec_deg) {
  long long ds = std::llround(std::abs(dec_deg) * 3600.0 * 10.0);
  const char sign = dec_deg < 0.0 && ds > 0 ? '-' : '+';
  const long long d = ds / 36000;
  ds %= 36000;
  const long long m = ds / 600;
  ds %= 600;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%02lld:%02lld:%02lld.%01lld", sign, d, m, ds / 10, ds % 10);
  return buf;
}

std::string write_description(const PointingMeta &pointing, const DiscManifest &manifest) {
  std::ostringstream out;
  out << "DISC " << manifest.disc_id << '\n';
  out << "POINTING " << pointing.pointing_id << '\n';
  out << "SOURCE " << pointing.source_name << '\n';
  out << "DATE " << pointing.observation_date << '\n';
  out << "BYTES " << manifest.bytes_used << "\n\n";
  char line[128];
  for (std::size_t i = 0; i < pointing.beams.size(); ++i) {
    const auto &b = pointing.beams[i];
    std::snprintf(line, sizeof line, "B%02zu %s %s %08.4f %+08.4f\n", i + 1, format_ra_hms(b.ra_deg).c_str(),
                  format_dec_dms(b.dec_deg).c_str(), b.l_deg, b.b_deg);
    out << line;
  }
  return out.str();
}

std::pair<double, double> equatorial_to_galactic(double ra_deg, double dec_deg) {
  const double ra = ra_deg * kDeg, dec = dec_deg * kDeg;
  const double ra_g = kNgpRaDeg * kDeg, dec_g = kNgpDecDeg * kDeg;
  const double dra = ra - ra_g;
  const double z = std::sin(dec) * std::sin(dec_g) + std::cos(dec) * std::cos(dec_g) * std::cos(dra);
  const double y = std::cos(dec) * std::sin(dra);
  const double x = std::sin(dec) * std::cos(dec_g) - std::cos(dec) * std::sin(dec_g) * std::cos(dra);
  const double rho = std::hypot(x, y);
  const double b = std::atan2(z, rho) / kDeg;
  if (rho < 1e-14) {
    return {0.0, b};
  }
  return {wrap_360(kNcpGalacticLongitudeDeg - std::atan2(y, x) / kDeg), b};
}

std::pair<double, double> galactic_to_equatorial(double l_deg, double b_deg) {
  const double l = l_deg * kDeg, b = b_deg * kDeg;
  const double dec_g = kNgpDecDeg * kDeg;
  const double dl = kNcpGalacticLongitudeDeg * kDeg - l;
  const double z = std::sin(b) * std::sin(dec_g) + std::cos(b) * std::cos(dec_g) * std::cos(dl);
  const double y = std::cos(b) * std::sin(dl);
  const double x = std::sin(b) * std::cos(dec_g) - std::cos(b) * std::sin(dec_g) * std::cos(dl);
  const double rho = std::hypot(x, y);
  const double dec = std::atan2(z, rho) / kDeg;
  if (rho < 1e-14) {
    return {0.0, dec};
  }
  return {wrap_360(kNgpRaDeg + std::atan2(y, x) / kDeg), dec};
}

std::string build_index_csv(const std::vector<DiscManifest> &manifests) {
  std::ostringstream out;
  out << "disc_id,pointing_id,source,beam_id,ra_deg,dec_deg,l_deg,b_deg\n";
  char nums[128];
  for (const auto &m : manifests) {
    for (const auto &b : m.pointing.beams) {
      std::snprintf(nums, sizeof nums, "%.6f,%.6f,%.6f,%.6f", b.ra_deg, b.dec_deg, b.l_deg, b.b_deg);
      out << csv_field(m.disc_id) << ',' << csv_field(m.pointing.pointing_id) << ','
          << csv_field(m.pointing.source_name) << ',' << csv_field(b.beam_id) << ',' << nums << '\n';
    }
  }
  return out.str();
}

std::string build_index_html(const std::vector<DiscManifest> &manifests) {
  std::ostringstream out;
  out << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Archive index</title></head><body>\n"
      << "<table>\n<tr><th>disc</th><th>pointing</th><th>source</th><th>beam</th>"
      << "<th>RA (J2000)</th><th>Dec (J2000)</th><th>l</th><th>b</th></tr>\n";
  char nums[64];
  for (const auto &m : manifests) {
    for (const auto &b : m.pointing.beams) {
      out << "<tr><td>" << html_escape(m.disc_id) << "</td><td>" << html_escape(m.pointing.pointing_id)
          << "</td><td>" << html_escape(m.pointing.source_name) << "</td><td>" << html_escape(b.beam_id)
          << "</td><td>" << format_ra_hms(b.ra_deg) << "</td><td>" << format_dec_dms(b.dec_deg) << "</td>";
      std::snprintf(nums, sizeof nums, "<td>%.4f</td><td>%+.4f</td>", b.l_deg, b.b_deg);
      out << nums << "</tr>\n";
    }
  }
  out << "</table>\n</body></html>\n";
  return out.str();
}

PointingMeta make_pointing(std::string pointing_id, std::string source_name, std::string date, double ra_deg,
                           double dec_deg, std::uint64_t bytes_per_beam) {
  PointingMeta p;
  p.pointing_id = std::move(pointing_id);
  p.source_name = std::move(source_name);
  p.observation_date = std::move(date);
  p.bytes_per_beam = bytes_per_beam;
  for (std::size_t i = 0; i < kBeamsPerPointing; ++i) {
    double radius = 0.0, angle = 0.0;
    if (i >= 1 && i <= 6) {
      radius = kBeamSpacingDeg;
      angle = 60.0 * static_cast<double>(i - 1);
    } else if (i >= 7) {
      radius = std::numbers::sqrt3 * kBeamSpacingDeg;
      angle = 30.0 + 60.0 * static_cast<double>(i - 7);
    }
    BeamPosition b;
    char id[16];
    std::snprintf(id, sizeof id, ".B%02zu", i + 1);
    b.beam_id = p.pointing_id + id;
    b.dec_deg = std::clamp(dec_deg + radius * std::cos(angle * kDeg), -90.0, 90.0);
    const double cos_dec = std::max(std::cos(dec_deg * kDeg), 1e-6);
    b.ra_deg = wrap_360(ra_deg + radius * std::sin(angle * kDeg) / cos_dec);
    std::tie(b.l_deg, b.b_deg) = equatorial_to_galactic(b.ra_deg, b.dec_deg);
    p.beams.push_back(std::move(b));
  }
  return p;
}

std::vector<PointingMeta> synthetic_survey_pointings(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<PointingMeta> out;
  constexpr std::size_t kTargets = 56;
  constexpr std::size_t kRepeats = 9;
  constexpr double kOffset = 0.5; // pointing grid half-step around each target, degrees
  std::size_t serial = 0;
  auto date_for = [&](std::size_t n) {
    const int day = static_cast<int>(n % 28) + 1;
    const int month = static_cast<int>((n / 28) % 12) + 1;
    char buf[16];
    std::snprintf(buf, sizeof buf, "2002-%02d-%02d", month, day);
    return std::string(buf);
  };
  std::vector<std::pair<double, double>> centres;
  for (std::size_t t = 0; t < kTargets; ++t) {
    const double ra = 360.0 * unit(rng);
    const double dec = std::asin(2.0 * unit(rng) * 0.9 - 0.9) / kDeg; // keep away from the poles
    char name[32];
    const int ra_min = static_cast<int>(ra / 15.0 * 60.0);
    const int dec_min = static_cast<int>(std::abs(dec) * 60.0);
    std::snprintf(name, sizeof name, "EG J%02d%02d%c%02d%02d", ra_min / 60, ra_min % 60, dec < 0 ? '-' : '+',
                  dec_min / 60, dec_min % 60);
    for (int q = 0; q < 4; ++q) {
      const double dra = (q % 2 ? kOffset : -kOffset) / std::cos(dec * kDeg);
      const double ddec = q / 2 ? kOffset : -kOffset;
      ++serial;
      char pid[16];
      std::snprintf(pid, sizeof pid, "P%03zu", serial);
      out.push_back(make_pointing(pid, name, date_for(serial), wrap_360(ra + dra), dec + ddec, kSurveyBytesPerBeam));
    }
  }
  // One planned pointing was never observed and nine were repeated.
  const std::size_t dropped = static_cast<std::size_t>(rng() % out.size());
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(dropped));
  for (std::size_t r = 0; r < kRepeats; ++r) {
    const PointingMeta &src = out[static_cast<std::size_t>(rng() % out.size())];
    PointingMeta again =
        make_pointing(src.pointing_id + "R", src.source_name, date_for(++serial), 0.0, 0.0, src.bytes_per_beam);
    for (std::size_t i = 0; i < again.beams.size(); ++i) {
      again.beams[i].ra_deg = src.beams[i].ra_deg;
      again.beams[i].dec_deg = src.beams[i].dec_deg;
      again.beams[i].l_deg = src.beams[i].l_deg;
      again.beams[i].b_deg = src.beams[i].b_deg;
    }
    out.push_back(std::move(again));
  }
  return out;
}

std::vector<PointingMeta> read_pointings_csv(std::istream &in) {
  std::vector<PointingMeta> out;
  std::map<std::string, std::size_t> index;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (first) {
      first = false;
      if (line.rfind("pointing_id,", 0) == 0) continue;
    }
    std::vector<std::string> f;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) {
      throw Error(ErrorCode::ParseError, "pointing row needs 7 columns: " + line);
    }
    BeamPosition b;
    std::uint64_t bytes = 0;
    try {
      b.beam_id = f[3];
      b.ra_deg = std::stod(f[4]);
      b.dec_deg = std::stod(f[5]);
      bytes = std::stoull(f[6]);
    } catch (const std::logic_error &) {
      throw Error(ErrorCode::ParseError, "bad number in pointing row: " + line);
    }
    if (!(b.ra_deg >= 0.0 && b.ra_deg < 360.0 && b.dec_deg >= -90.0 && b.dec_deg <= 90.0)) {
      throw Error(ErrorCode::ParseError, "coordinates out of range: " + line);
    }
    std::tie(b.l_deg, b.b_deg) = equatorial_to_galactic(b.ra_deg, b.dec_deg);
    auto [it, fresh] = index.try_emplace(f[0], out.size());
    if (fresh) {
      PointingMeta p;
      p.pointing_id = f[0];
      p.source_name = f[1];
      p.observation_date = f[2];
      p.bytes_per_beam = bytes;
      out.push_back(std::move(p));
    }
    PointingMeta &p = out[it->second];
    if (p.bytes_per_beam != bytes) {
      throw Error(ErrorCode::ParseError, "pointing " + p.pointing_id + " mixes beam sizes");
    }
    p.beams.push_back(std::move(b));
  }
  for (const auto &p : out) p.validate();
  return out;
}

} // namespace beamforge
