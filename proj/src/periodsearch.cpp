#include "beamforge/periodsearch.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <utility>

#include "beamforge/error.hpp"
#include "parallel.hpp"

namespace beamforge {

namespace {

// FFTW planning is not thread-safe; execution with new-array calls is.
std::mutex &planner_mutex() {
  static std::mutex m;
  return m;
}

class FftPlan {
public:
  explicit FftPlan(std::size_t n) : n_(n) {
    std::lock_guard lock(planner_mutex());
    double *in = fftw_alloc_real(n);
    fftw_complex *out = fftw_alloc_complex(n / 2 + 1);
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
  }
  ~FftPlan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  FftPlan(const FftPlan &) = delete;
  FftPlan &operator=(const FftPlan &) = delete;

  std::size_t size() const { return n_; }
  void execute(double *in, fftw_complex *out) const { fftw_execute_dft_r2c(plan_, in, out); }

private:
  std::size_t n_;
  fftw_plan plan_;
};

const FftPlan &plan_for(std::size_t n) {
  static std::mutex m;
  static std::map<std::size_t, std::unique_ptr<FftPlan>> cache;
  std::lock_guard lock(m);
  auto &slot = cache[n];
  if (!slot) {
    slot = std::make_unique<FftPlan>(n);
  }
  return *slot;
}

struct FftBuffers {
  explicit FftBuffers(std::size_t n) : in(fftw_alloc_real(n)), out(fftw_alloc_complex(n / 2 + 1)) {}
  ~FftBuffers() {
    fftw_free(in);
    fftw_free(out);
  }
  FftBuffers(const FftBuffers &) = delete;
  FftBuffers &operator=(const FftBuffers &) = delete;
  double *in;
  fftw_complex *out;
};

void check_fft_length(std::size_t n_fft) {
  if (n_fft < 2 || !std::has_single_bit(n_fft)) {
    throw Error(ErrorCode::BadLength, "n_fft must be a power of two >= 2, got " + std::to_string(n_fft));
  }
}

PowerSpectrum power_with_plan(const TimeSeries &ts, const FftPlan &plan) {
  const std::size_t n_fft = plan.size();
  FftBuffers buf(n_fft);
  const std::size_t n_copy = std::min(ts.values.size(), n_fft);
  const double mean =
      ts.values.empty() ? 0.0
                        : std::accumulate(ts.values.begin(), ts.values.end(), 0.0) /
                              static_cast<double>(ts.values.size());
  for (std::size_t i = 0; i < n_copy; ++i) {
    buf.in[i] = ts.values[i] - mean;
  }
  std::fill(buf.in + n_copy, buf.in + n_fft, 0.0);
  plan.execute(buf.in, buf.out);

  PowerSpectrum spec;
  spec.n_fft = n_fft;
  spec.dm = ts.dm;
  spec.freq_resolution_hz = 1000.0 / (static_cast<double>(n_fft) * ts.t_samp_ms);
  spec.powers.resize(n_fft / 2);
  for (std::size_t k = 1; k <= n_fft / 2; ++k) {
    spec.powers[k - 1] = buf.out[k][0] * buf.out[k][0] + buf.out[k][1] * buf.out[k][1];
  }
  return spec;
}

double median_of(std::vector<double> v) {
  if (v.empty()) {
    return 0.0;
  }
  auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

// Stable LSD radix sort of indices by value. Powers are non-negative, so
// their IEEE bit patterns sort in the same order as the values.
std::vector<std::uint32_t> rank_order(const std::vector<double> &values) {
  const std::size_t n = values.size();
  constexpr unsigned kBits = 11;
  constexpr std::size_t kBuckets = std::size_t{1} << kBits;
  std::vector<std::uint64_t> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    keys[i] = std::bit_cast<std::uint64_t>(values[i] + 0.0); // folds -0 into +0
  }
  std::vector<std::uint32_t> order(n), next(n);
  std::iota(order.begin(), order.end(), 0u);
  std::vector<std::size_t> count(kBuckets);
  for (unsigned shift = 0; shift < 64; shift += kBits) {
    std::fill(count.begin(), count.end(), 0);
    for (std::size_t i = 0; i < n; ++i) ++count[(keys[i] >> shift) & (kBuckets - 1)];
    if (std::find(count.begin(), count.end(), n) != count.end()) continue; // digit constant
    std::size_t sum = 0;
    for (auto &c : count) sum += std::exchange(c, sum);
    for (std::uint32_t idx : order) next[count[(keys[idx] >> shift) & (kBuckets - 1)]++] = idx;
    order.swap(next);
  }
  return order;
}

// Exact median of a window of fixed width sliding over `values`; the window
// is clamped inside the array at both ends. The window is kept as a bitset
// over global ranks and the median rank is walked to its new position after
// each one-in, one-out update.
std::vector<double> running_median(const std::vector<double> &values, std::size_t width) {
  const std::size_t n = values.size();
  std::vector<double> med(n);
  if (n == 0) {
    return med;
  }
  const std::vector<std::uint32_t> order = rank_order(values);
  std::vector<std::uint32_t> rank(n);
  std::vector<double> sorted(n);
  for (std::size_t r = 0; r < n; ++r) {
    rank[order[r]] = static_cast<std::uint32_t>(r);
    sorted[r] = values[order[r]];
  }
  std::vector<std::uint64_t> bits((n + 63) / 64, 0);
  auto test = [&](std::size_t r) { return (bits[r / 64] >> (r % 64)) & 1u; };
  auto next_set = [&](std::size_t r) {
    std::size_t word = r / 64;
    std::uint64_t w = bits[word] & (~std::uint64_t{0} << (r % 64));
    while (w == 0) w = bits[++word];
    return word * 64 + static_cast<std::size_t>(std::countr_zero(w));
  };
  auto prev_set = [&](std::size_t r) {
    std::size_t word = r / 64;
    std::uint64_t w = bits[word] & (~std::uint64_t{0} >> (63 - r % 64));
    while (w == 0) w = bits[--word];
    return word * 64 + 63 - static_cast<std::size_t>(std::countl_zero(w));
  };

  const std::size_t w = std::min(width, n);
  const std::size_t half = w / 2;
  const std::size_t k = (w - 1) / 2; // window elements strictly below the median
  for (std::size_t i = 0; i < w; ++i) bits[rank[i] / 64] |= std::uint64_t{1} << (rank[i] % 64);
  std::size_t m = next_set(0);
  for (std::size_t c = 0; c < k; ++c) m = next_set(m + 1);
  std::size_t below = k;

  std::size_t start = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t want = std::min(i > half ? i - half : 0, n - w);
    while (start < want) {
      const std::uint32_t out = rank[start];
      const std::uint32_t in = rank[start + w];
      bits[out / 64] &= ~(std::uint64_t{1} << (out % 64));
      bits[in / 64] |= std::uint64_t{1} << (in % 64);
      below = below - (out < m) + (in < m);
      if (!test(m)) m = next_set(m);
      while (below > k) {
        m = prev_set(m - 1);
        --below;
      }
      while (below < k) {
        m = next_set(m + 1);
        ++below;
      }
      ++start;
    }
    med[i] = sorted[m];
  }
  return med;
}

// log of the upper Gaussian tail probability Q(z), z >= 0.
double log_gaussian_tail(double z) {
  if (z < 35.0) {
    return std::log(0.5 * std::erfc(z / std::numbers::sqrt2));
  }
  const double z2 = z * z;
  return -0.5 * z2 - std::log(z) - 0.5 * std::log(2.0 * std::numbers::pi) +
         std::log1p(-1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2));
}

} // namespace

PowerSpectrum fft_power(const TimeSeries &ts, std::size_t n_fft) {
  check_fft_length(n_fft);
  return power_with_plan(ts, plan_for(n_fft));
}

PowerSpectrum apply_birdie_mask(PowerSpectrum spec, const BirdieList &birdies) {
  if (birdies.empty() || spec.powers.empty()) {
    return spec;
  }
  const std::size_t n = spec.powers.size();
  std::vector<bool> masked(n, false);
  bool any = false;
  for (const Birdie &b : birdies) {
    for (std::size_t i = 0; i < n; ++i) {
      if (std::abs(spec.frequency_hz(i) - b.center_hz) <= b.half_width_hz) {
        masked[i] = true;
        any = true;
      }
    }
  }
  if (!any) {
    return spec;
  }
  constexpr std::size_t kNeighbours = 50;
  const std::vector<double> original = spec.powers;
  std::size_t i = 0;
  while (i < n) {
    if (!masked[i]) {
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end < n && masked[end]) {
      ++end;
    }
    std::vector<double> local;
    for (std::size_t j = i; j > 0 && local.size() < kNeighbours; --j) {
      if (!masked[j - 1]) local.push_back(original[j - 1]);
    }
    const std::size_t left = local.size();
    for (std::size_t j = end; j < n && local.size() < left + kNeighbours; ++j) {
      if (!masked[j]) local.push_back(original[j]);
    }
    const double fill = median_of(std::move(local));
    std::fill(spec.powers.begin() + static_cast<std::ptrdiff_t>(i),
              spec.powers.begin() + static_cast<std::ptrdiff_t>(end), fill);
    i = end;
  }
  return spec;
}

PowerSpectrum normalize_spectrum(PowerSpectrum spec) {
  auto &p = spec.powers;
  if (p.empty()) {
    return spec;
  }
  const std::vector<double> med = running_median(p, kRunningMedianWindow);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = med[i] > 0.0 ? p[i] / med[i] : 0.0;
  }
  // Scale by the mean ratio, ignoring outliers far above the bulk so that
  // strong signals do not depress the noise level.
  const double clip = 20.0 * median_of(p);
  double sum = 0.0;
  std::size_t count = 0;
  for (double r : p) {
    if (r < clip) {
      sum += r;
      ++count;
    }
  }
  const double scale = count > 0 ? sum / static_cast<double>(count) : 0.0;
  for (double &r : p) {
    r = scale > 0.0 ? r / scale : 0.0;
  }
  return spec;
}

double spectral_snr(double normalized_power) {
  const double target = -normalized_power;
  if (!(normalized_power > std::numbers::ln2)) {
    return 0.0;
  }
  double lo = 0.0;
  double hi = std::sqrt(2.0 * normalized_power) + 1.0;
  while (log_gaussian_tail(hi) > target) {
    hi *= 2.0;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (log_gaussian_tail(mid) > target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double power_for_snr(double snr) {
  if (snr <= 0.0) {
    return std::numbers::ln2;
  }
  return -log_gaussian_tail(snr);
}

double robust_sigma(std::span<const double> values) {
  if (values.empty()) {
    return 0.0;
  }
  std::vector<double> v(values.begin(), values.end());
  const double med = median_of(v);
  for (double &x : v) {
    x = std::abs(x - med);
  }
  return 1.4826 * median_of(std::move(v));
}

struct SearchPlan::Impl {
  Impl(const FilterbankBlock &block, std::size_t padding)
      : dedisperser(block),
        plan(&plan_for(padding * std::bit_ceil(static_cast<std::size_t>(block.params().n_samples)))) {}
  Dedisperser dedisperser;
  const FftPlan *plan;
};

SearchPlan::SearchPlan(const FilterbankBlock &block, std::size_t fft_padding) {
  if (fft_padding == 0 || !std::has_single_bit(fft_padding)) {
    throw Error(ErrorCode::InvalidParams, "fft padding must be a power of two");
  }
  impl_ = std::make_unique<Impl>(block, fft_padding);
  check_fft_length(impl_->plan->size());
}

SearchPlan::~SearchPlan() = default;
SearchPlan::SearchPlan(SearchPlan &&) noexcept = default;
SearchPlan &SearchPlan::operator=(SearchPlan &&) noexcept = default;

std::size_t SearchPlan::n_fft() const { return impl_->plan->size(); }
const ObservationParams &SearchPlan::params() const { return impl_->dedisperser.params(); }

std::vector<Candidate> SearchPlan::hunt_trial(double dm, std::size_t dm_index,
                                              const BirdieList &birdies,
                                              double snr_threshold) const {
  const TimeSeries ts = impl_->dedisperser.dedisperse(dm);
  const PowerSpectrum spec =
      normalize_spectrum(apply_birdie_mask(power_with_plan(ts, *impl_->plan), birdies));
  const double power_threshold = power_for_snr(snr_threshold);
  const double span_ms = static_cast<double>(spec.n_fft) * ts.t_samp_ms;
  std::vector<Candidate> hits;
  for (std::size_t i = 0; i < spec.powers.size(); ++i) {
    if (spec.powers[i] < power_threshold) {
      continue;
    }
    const std::size_t k = i + 1;
    Candidate c;
    c.fourier_bin = k;
    c.period_ms = span_ms / static_cast<double>(k);
    c.freq_hz = 1000.0 * static_cast<double>(k) / span_ms;
    c.dm = dm;
    c.dm_index = dm_index;
    c.snr = spectral_snr(spec.powers[i]);
    hits.push_back(c);
  }
  return hits;
}

std::vector<std::vector<Candidate>> hunt(const SearchPlan &plan, const DmTrialGrid &grid,
                                         const BirdieList &birdies, const SearchOptions &opts) {
  if (!(opts.snr_threshold > 0.0)) {
    throw Error(ErrorCode::InvalidParams, "snr threshold must be > 0");
  }
  std::vector<std::vector<Candidate>> per_trial(grid.n_trials());
  detail::parallel_for(grid.n_trials(), opts.threads, [&](std::size_t i) {
    per_trial[i] = plan.hunt_trial(grid.dm_values[i], i, birdies, opts.snr_threshold);
  });
  return per_trial;
}

std::vector<Candidate> select_best(std::vector<Candidate> hits, const SearchOptions &opts) {
  std::sort(hits.begin(), hits.end(), [](const Candidate &a, const Candidate &b) {
    if (a.snr != b.snr) return a.snr > b.snr;
    if (a.fourier_bin != b.fourier_bin) return a.fourier_bin < b.fourier_bin;
    return a.dm_index < b.dm_index;
  });
  std::unordered_map<std::size_t, std::vector<std::size_t>> taken;
  auto near_taken = [&taken](const Candidate &c) {
    for (std::size_t bin = c.fourier_bin > 0 ? c.fourier_bin - 1 : 0; bin <= c.fourier_bin + 1; ++bin) {
      auto it = taken.find(bin);
      if (it == taken.end()) continue;
      for (std::size_t d : it->second) {
        const std::size_t gap = d > c.dm_index ? d - c.dm_index : c.dm_index - d;
        if (gap <= 2) return true;
      }
    }
    return false;
  };
  std::vector<Candidate> out;
  for (const Candidate &c : hits) {
    if (out.size() >= opts.max_candidates) break;
    if (near_taken(c)) continue;
    taken[c.fourier_bin].push_back(c.dm_index);
    out.push_back(c);
  }
  return out;
}

std::vector<Candidate> search_all_dms(const FilterbankBlock &block, const DmTrialGrid &grid,
                                      const BirdieList &birdies, const SearchOptions &opts) {
  if (grid.empty()) {
    return {};
  }
  const SearchPlan plan(block, opts.fft_padding);
  auto per_trial = hunt(plan, grid, birdies, opts);
  std::vector<Candidate> all;
  for (auto &trial : per_trial) {
    all.insert(all.end(), trial.begin(), trial.end());
  }
  return select_best(std::move(all), opts);
}

void write_candidates(const std::vector<Candidate> &cands, std::ostream &out) {
  out << "# snr\tperiod_ms\tdm\tfreq_hz\tbin\n";
  char line[160];
  for (const Candidate &c : cands) {
    std::snprintf(line, sizeof line, "%.3f\t%.6f\t%.3f\t%.6f\t%zu\n", c.snr, c.period_ms, c.dm,
                  c.freq_hz, c.fourier_bin);
    out << line;
  }
  if (!out) {
    throw Error(ErrorCode::IoError, "candidate write failed");
  }
}

std::vector<Candidate> read_candidates(std::istream &in) {
  std::vector<Candidate> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Candidate c;
    if (!(ss >> c.snr >> c.period_ms >> c.dm >> c.freq_hz >> c.fourier_bin)) {
      throw Error(ErrorCode::ParseError, "bad candidate line: " + line);
    }
    out.push_back(c);
  }
  return out;
}

BirdieList read_birdies(std::istream &in) {
  BirdieList out;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    Birdie b;
    std::string extra;
    if (!(ss >> b.center_hz >> b.half_width_hz) || (ss >> extra)) {
      throw Error(ErrorCode::ParseError, "expected `centre_hz half_width_hz`: " + line);
    }
    if (!(b.half_width_hz > 0.0)) {
      throw Error(ErrorCode::ParseError, "birdie needs a positive half-width: " + line);
    }
    out.push_back(b);
  }
  return out;
}

} // namespace beamforge
