#include <doctest.h>

#include <cmath>
#include <sstream>

#include "beamforge/clustersim.hpp"
#include "beamforge/error.hpp"
#include "generators.hpp"

using namespace beamforge;
using testgen::code_of;

namespace {

// A machine whose stages add up to `total_min` with the given download time.
MachineProfile flat_profile(const std::string &name, double total_min, double download_s) {
  MachineProfile p;
  p.name = name;
  p.download_s = download_s;
  p.n_trials = 450;
  p.hunt_trial_s = (total_min * 60.0 - download_s) / 450.0;
  return p;
}

bool downloads_disjoint(const SimResult &r) {
  std::vector<std::pair<double, double>> iv;
  for (const auto &e : r.events) iv.emplace_back(e.download_start_s, e.download_end_s);
  std::sort(iv.begin(), iv.end());
  for (std::size_t i = 1; i < iv.size(); ++i) {
    if (iv[i].first < iv[i - 1].second) return false;
  }
  return true;
}

} // namespace

TEST_SUITE("clustersim") {

TEST_CASE("table columns add up to the printed totals") {
  const auto profiles = table1_profiles();
  const auto totals = table1_reported_totals_min();
  REQUIRE(profiles.size() == 7);
  REQUIRE(totals.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) {
    CAPTURE(i);
    CHECK(std::abs(profiles[i].total_min() - totals[i]) < 0.5);
  }
}

TEST_CASE("one machine, ten beams") {
  const auto c0 = table1_profiles()[0];
  const auto r = simulate({c0}, 10, true);
  CHECK(r.makespan_s == doctest::Approx(10.0 * c0.total_s()).epsilon(1e-12));
  CHECK(std::abs(r.makespan_s / 60.0 - 999.0) < 1.0);
  CHECK(r.beams_per_machine[0] == 10);
  CHECK(r.download_overlaps == 0);
}

TEST_CASE("rate sum for six slow machines and one fast one") {
  std::vector<MachineProfile> ps;
  for (int i = 0; i < 6; ++i) ps.push_back(flat_profile("cel" + std::to_string(i), 100.8, 36.0));
  ps.push_back(flat_profile("p4", 28.3, 36.0));
  const double want = 6.0 / 100.8 + 1.0 / 28.3;
  CHECK(rate_sum_per_min(ps) == doctest::Approx(want).epsilon(1e-12));
  CHECK(std::abs(want - 0.0949) < 1e-4);
  const auto r = simulate(ps, 3016, true);
  CHECK(r.total_beams() == 3016);
  CHECK(std::abs(r.makespan_s / 60.0 - 31800.0) / 31800.0 < 0.01);
  CHECK(std::abs(r.aggregate_rate_per_min() - want) / want < 1e-3);
}

TEST_CASE("seven table machines keep the link free of overlaps") {
  const auto ps = table1_profiles();
  const auto r = simulate(ps, 3016, true);
  CHECK(r.download_overlaps == 0);
  CHECK(downloads_disjoint(r));
  CHECK(parallel_efficiency(r, ps) >= 0.99);
  // Link waits only ever slow a machine down, and by less than the
  // other machines' combined download share.
  double others = 0.0;
  for (const auto &p : ps) others += download_fraction(p);
  const double loss = 1.0 - r.aggregate_rate_per_min() / rate_sum_per_min(ps);
  CHECK(loss >= 0.0);
  CHECK(loss < others);
  CHECK(r.link_busy_fraction == doctest::Approx(others).epsilon(0.05));
}

TEST_CASE("download fractions") {
  const auto ps = table1_profiles();
  CHECK(download_fraction(ps[0]) == doctest::Approx(44.5 / ps[0].total_s()));
  CHECK(std::abs(download_fraction(ps[0]) - 0.0074) < 0.0002);
  CHECK(std::abs(download_fraction(ps[5]) - 0.021) < 0.0005);
  CHECK(std::abs(36.0 / 6000.0 - 0.006) < 1e-12);
  MachineProfile idle;
  idle.name = "idle";
  idle.download_s = 36.0;
  CHECK(download_fraction(idle) == 1.0);
}

TEST_CASE("saturation point") {
  const auto celeron = flat_profile("cel", (5958.0 + 194.8 / 5.4) / 60.0, 194.8 / 5.4);
  CHECK(celeron.compute_s() == doctest::Approx(5958.0));
  const auto n_raw = saturation_point(celeron, 5.4, 194.8);
  CHECK(n_raw == 166);
  MachineProfile even;
  even.name = "even";
  even.download_s = 10.0;
  even.best_s = 10.0;
  even.n_trials = 0;
  CHECK(saturation_point(even, 1.0, 10.0) == 1);
  const auto n_agg = saturation_point(celeron, 5.4, 3.05);
  const double scale = static_cast<double>(n_agg) / static_cast<double>(n_raw);
  CHECK(scale > 60.0);
  CHECK(scale < 68.0);
  CHECK(code_of([&] { saturation_point(celeron, 0.0, 1.0); }) == ErrorCode::InvalidParams);
}

TEST_CASE("identical machines below saturation scale almost linearly") {
  const auto base = table1_profiles()[0];
  const double frac = download_fraction(base);
  for (std::size_t n : {1, 2, 4, 8, 16}) {
    const std::vector<MachineProfile> ps(n, base);
    const auto r = simulate(ps, 40 * n, true);
    CAPTURE(n);
    CHECK(r.download_overlaps == 0);
    CHECK(parallel_efficiency(r, ps) >= 1.0 - static_cast<double>(n - 1) * frac);
  }
}

TEST_CASE("random clusters: conservation, no overlap, determinism") {
  testgen::Gen g(81);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<MachineProfile> ps;
    const auto m = g.range(1, 10);
    for (std::int64_t i = 0; i < m; ++i) {
      MachineProfile p;
      p.name = "m" + std::to_string(i);
      p.download_s = g.real(0.5, 200.0);
      p.decimate_s = g.real(0.0, 300.0);
      p.hunt_trial_s = g.real(0.0, 5.0);
      p.n_trials = static_cast<std::size_t>(g.range(0, 500));
      ps.push_back(p);
    }
    const auto n = static_cast<std::size_t>(g.range(1, 200));
    const bool stagger = g.coin();
    const auto r = simulate(ps, n, stagger);
    CHECK(r.total_beams() == n);
    CHECK(r.events.size() == n);
    if (stagger) {
      CHECK(r.download_overlaps == 0);
      CHECK(downloads_disjoint(r));
    }
    for (const auto &e : r.events) {
      CHECK(e.claim_s <= e.download_start_s);
      CHECK(e.download_start_s <= e.download_end_s);
      CHECK(e.download_end_s <= e.done_s);
      CHECK(e.done_s <= r.makespan_s);
    }
    std::ostringstream a, b;
    write_events_csv(r, a);
    write_events_csv(simulate(ps, n, stagger), b);
    CHECK(a.str() == b.str());
  }
}

TEST_CASE("without staggering simultaneous downloads share the link") {
  const std::vector<MachineProfile> ps(4, flat_profile("x", 10.0, 60.0));
  const auto r = simulate(ps, 4, false);
  CHECK(r.download_overlaps == 6);
  for (const auto &e : r.events) CHECK(e.download_end_s == doctest::Approx(240.0));
  const auto s = simulate(ps, 4, true);
  CHECK(s.download_overlaps == 0);
  CHECK(s.makespan_s == doctest::Approx(600.0 + 180.0));
}

TEST_CASE("profile csv round trip and errors") {
  const auto ps = table1_profiles();
  std::stringstream ss;
  write_profiles_csv(ps, ss);
  const auto back = read_profiles_csv(ss);
  REQUIRE(back.size() == ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    CHECK(back[i].name == ps[i].name);
    CHECK(back[i].total_s() == doctest::Approx(ps[i].total_s()));
  }
  std::istringstream short_row("a,1,2,3\n");
  CHECK(code_of([&] { read_profiles_csv(short_row); }) == ErrorCode::ParseError);
  std::istringstream bad_num("a,1,2,3,4,x,6,450\n");
  CHECK(code_of([&] { read_profiles_csv(bad_num); }) == ErrorCode::ParseError);
  std::istringstream no_dl("a,0,2,3,4,5,6,450\n");
  CHECK(code_of([&] { read_profiles_csv(no_dl); }) == ErrorCode::InvalidParams);
  CHECK(code_of([&] { simulate({}, 3, true); }) == ErrorCode::InvalidParams);
  CHECK(code_of([&] { simulate(ps, 0, true); }) == ErrorCode::InvalidParams);
}

TEST_CASE("summary text") {
  const auto ps = table1_profiles();
  std::ostringstream out;
  write_summary(simulate(ps, 70, true), ps, out);
  CHECK(out.str().find("overlapping downloads 0") != std::string::npos);
  CHECK(out.str().find("client5") != std::string::npos);
}

}
