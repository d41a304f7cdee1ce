#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

#include "beamforge/archive.hpp"
#include "beamforge/beamio.hpp"

namespace beamforge {

/// Settings shared by every subcommand. Loaded from a flat `key = value`
/// file (`#` starts a comment); unknown keys are rejected.
struct GlobalConfig {
  std::filesystem::path shared_dir;
  std::filesystem::path scratch_dir;
  ObservationParams observation;
  std::size_t n_trials = 450;
  double dm_min = 0.0;
  double dm_max = 700.0;
  MediaSpec dvd = dvd_june2003();
  MediaSpec dlt = dlt_iv_june2003();

  void set(std::string_view key, std::string_view value);

  static GlobalConfig parse(std::string_view text);
  static GlobalConfig load(const std::filesystem::path &path);
};

} // namespace beamforge
