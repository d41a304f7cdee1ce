#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "beamforge/beamio.hpp"

namespace beamforge {

struct MediaSpec {
  std::string name;
  std::string unit_noun;
  double capacity_gb = 0.0;
  double unit_cost = 0.0;
  double writer_cost = 0.0;
  double other_costs = 0.0;

  void validate() const;
  std::uint64_t capacity_bytes() const;
};

// June 2003 prices.
MediaSpec dvd_june2003();
MediaSpec dlt_iv_june2003();

inline constexpr double kSurveyDataGb = 573.7;
inline constexpr std::size_t kSurveyDvdCount = 233;
inline constexpr std::size_t kSurveyDltCount = 22;
inline constexpr std::uint64_t kSurveyBytesPerBeam = 194'800'000;

struct DiscManifest {
  std::string disc_id;
  PointingMeta pointing;
  std::uint64_t bytes_used = 0;
  double fill_fraction = 0.0;
};

struct CostReport {
  MediaSpec media;
  std::size_t n_units = 0;
  double total_data_gb = 0.0;
  double cost_per_gb_max = 0.0;
  double cost_per_gb_actual = 0.0;
  double total_cost = 0.0;
  double fill_fraction = 0.0;
};

std::vector<DiscManifest> plan_discs(const std::vector<PointingMeta> &pointings,
                                     const MediaSpec &media);

CostReport cost_report(double total_data_gb, std::size_t n_units, const MediaSpec &media);

/// Side-by-side table of two media with a first/second ratio column.
std::string render_cost_table(const CostReport &first, const CostReport &second);

std::string format_ra_hms(double ra_deg);
std::string format_dec_dms(double dec_deg);

std::string write_description(const PointingMeta &pointing, const DiscManifest &manifest);

/// J2000 equatorial to Galactic, degrees. l in [0, 360), b in [-90, 90].
std::pair<double, double> equatorial_to_galactic(double ra_deg, double dec_deg);
std::pair<double, double> galactic_to_equatorial(double l_deg, double b_deg);

inline constexpr double kNgpRaDeg = 192.85948;
inline constexpr double kNgpDecDeg = 27.12825;
inline constexpr double kNcpGalacticLongitudeDeg = 122.93192;

std::string build_index_csv(const std::vector<DiscManifest> &manifests);
std::string build_index_html(const std::vector<DiscManifest> &manifests);

/// Builds a pointing from its centre using the 13-beam multibeam footprint.
PointingMeta make_pointing(std::string pointing_id, std::string source_name, std::string date,
                           double ra_deg, double dec_deg, std::uint64_t bytes_per_beam);

/// Deterministic stand-in for the survey layout: 56 targets x 4 pointings,
/// nine pointings observed twice and one missing (232 pointings, 3016 beams).
std::vector<PointingMeta> synthetic_survey_pointings(std::uint64_t seed = 2003);

/// CSV rows `pointing_id,source,date,beam_id,ra_deg,dec_deg,bytes_per_beam`.
std::vector<PointingMeta> read_pointings_csv(std::istream &in);

} // namespace beamforge
