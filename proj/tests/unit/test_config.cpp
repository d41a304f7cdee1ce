#include <doctest.h>

#include <cstdlib>

#include "beamforge/config.hpp"
#include "beamforge/error.hpp"
#include "generators.hpp"

using namespace beamforge;
using testgen::code_of;

TEST_SUITE("config") {

TEST_CASE("defaults and overrides") {
  ::unsetenv("BEAMFORGE_SHARED");
  const auto d = GlobalConfig::parse("");
  CHECK(d.n_trials == 450);
  CHECK(d.dm_max == 700.0);
  CHECK(d.observation.n_channels == 96);
  CHECK(d.dvd.unit_cost == 1.36);
  CHECK(d.shared_dir.empty());

  const auto c = GlobalConfig::parse("# survey settings\n"
                                     "shared_dir = /data/shared   # nfs\n"
                                     "\n"
                                     "  n_trials=100\n"
                                     "dm_max = 350.5\n"
                                     "dvd.unit_cost = 0.99\r\n"
                                     "n_channels = 48\n");
  CHECK(c.shared_dir == "/data/shared");
  CHECK(c.n_trials == 100);
  CHECK(c.dm_max == 350.5);
  CHECK(c.dvd.unit_cost == 0.99);
  CHECK(c.observation.n_channels == 48);
}

TEST_CASE("errors name the line") {
  try {
    GlobalConfig::parse("n_trials = 3\n\nfrobnicate = 1\n");
    FAIL("no error");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    CHECK(std::string(e.what()).find("frobnicate") != std::string::npos);
  }
  CHECK(code_of([] { GlobalConfig::parse("n_trials 3\n"); }) == ErrorCode::ParseError);
  CHECK(code_of([] { GlobalConfig::parse("n_trials = many\n"); }) == ErrorCode::ParseError);
  CHECK(code_of([] { GlobalConfig::parse("dm_max = 1.5x\n"); }) == ErrorCode::ParseError);
  CHECK(code_of([] { GlobalConfig::parse("n_channels = 0\n"); }) == ErrorCode::InvalidParams);
  CHECK(code_of([] { GlobalConfig::parse("dlt.capacity_gb = -1\n"); }) == ErrorCode::InvalidParams);
}

TEST_CASE("environment supplies the shared directory, the file wins") {
  ::setenv("BEAMFORGE_SHARED", "/from/env", 1);
  CHECK(GlobalConfig::parse("").shared_dir == "/from/env");
  CHECK(GlobalConfig::parse("shared_dir = /from/file\n").shared_dir == "/from/file");
  ::unsetenv("BEAMFORGE_SHARED");
}

TEST_CASE("load from disk") {
  const auto dir = testgen::scratch_dir("cfg");
  { std::ofstream(dir / "bf.conf") << "scratch_dir = /tmp/s\n"; }
  CHECK(GlobalConfig::load(dir / "bf.conf").scratch_dir == "/tmp/s");
  CHECK(code_of([&] { GlobalConfig::load(dir / "missing.conf"); }) == ErrorCode::IoError);
  std::filesystem::remove_all(dir);
}

}
