#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace beamforge {

/// Observation parameters shared by raw and aggregated filterbank data.
///
/// Channel 0 is the highest-frequency channel; channel c is centred at
/// `f_top_mhz - c * channel_bw_mhz`.
struct ObservationParams {
  std::uint32_t n_channels = 96;
  double channel_bw_mhz = 3.0;
  double f_top_mhz = 1516.5;
  double t_samp_ms = 0.125;
  std::uint64_t n_samples = std::uint64_t{1} << 21;
  std::uint8_t bits_per_sample = 1;
  std::string beam_id;
  double ra_deg = 0.0;
  double dec_deg = 0.0;

  void validate() const;

  double channel_freq_mhz(std::uint32_t channel) const {
    return f_top_mhz - static_cast<double>(channel) * channel_bw_mhz;
  }
  double total_bandwidth_mhz() const { return n_channels * channel_bw_mhz; }
  double duration_s() const { return static_cast<double>(n_samples) * t_samp_ms * 1e-3; }

  /// Packed bytes per time slice (each slice padded to a byte boundary).
  std::size_t bytes_per_slice() const {
    return (static_cast<std::size_t>(n_channels) * bits_per_sample + 7) / 8;
  }
  std::size_t payload_bytes() const { return bytes_per_slice() * n_samples; }

  /// Same parameters rounded to the resolution of the on-disk header
  /// (milli-hertz, nanoseconds, micro-degrees).
  ObservationParams canonical() const;

  friend bool operator==(const ObservationParams &a, const ObservationParams &b);
};

/// Multichannel time series, time-major with channel fastest. 1-bit data
/// is packed MSB-first; 8-bit data holds one byte per sample.
class FilterbankBlock {
public:
  FilterbankBlock() = default;
  explicit FilterbankBlock(ObservationParams params);
  FilterbankBlock(ObservationParams params, std::vector<std::uint8_t> payload);

  const ObservationParams &params() const { return params_; }
  std::span<const std::uint8_t> payload() const { return data_; }
  std::span<std::uint8_t> payload() { return data_; }

  std::uint8_t sample(std::uint32_t channel, std::uint64_t t) const;
  void set_sample(std::uint32_t channel, std::uint64_t t, std::uint8_t value);

  friend bool operator==(const FilterbankBlock &a, const FilterbankBlock &b) {
    return a.params_ == b.params_ && a.data_ == b.data_;
  }

private:
  ObservationParams params_;
  std::vector<std::uint8_t> data_;
};

struct PulsarSpec {
  double period_ms = 100.0;
  double dm = 0.0;
  double duty_cycle = 0.05;
  double amplitude = 0.1;

  void validate(const ObservationParams &target) const;
};

struct BeamPosition {
  std::string beam_id;
  double ra_deg = 0.0;
  double dec_deg = 0.0;
  double l_deg = 0.0;
  double b_deg = 0.0;
};

inline constexpr std::size_t kBeamsPerPointing = 13;

struct PointingMeta {
  std::string pointing_id;
  std::string source_name;
  std::string observation_date;
  std::vector<BeamPosition> beams;
  std::uint64_t bytes_per_beam = 0;

  void validate() const;
  std::uint64_t payload_bytes() const { return bytes_per_beam * beams.size(); }
};

inline constexpr std::size_t kBlockHeaderBytes = 123;
inline constexpr std::uint16_t kBlockFormatVersion = 1;

FilterbankBlock synthesize_beam(const ObservationParams &params,
                                const std::optional<PulsarSpec> &pulsar,
                                std::uint64_t seed);

/// Sums contiguous groups of `chan_factor` channels and `time_factor`
/// samples of a 1-bit block into an 8-bit block.
FilterbankBlock decimate(const FilterbankBlock &block, std::uint32_t chan_factor = 4,
                         std::uint32_t time_factor = 16);

/// Canonical form of a block: header quantized to file resolution, padding
/// bits cleared, payload length checked against the header.
FilterbankBlock convert_to_timeseries_format(const FilterbankBlock &block);

std::uint64_t raw_beam_size_bytes(const ObservationParams &params,
                                  std::uint64_t header_bytes = kBlockHeaderBytes);

std::vector<std::uint8_t> encode_block(const FilterbankBlock &block);
FilterbankBlock decode_block(std::span<const std::uint8_t> bytes);

void write_block(const FilterbankBlock &block, std::ostream &out);
void write_block(const FilterbankBlock &block, const std::filesystem::path &path);
FilterbankBlock read_block(std::istream &in);
FilterbankBlock read_block(const std::filesystem::path &path);

} // namespace beamforge
