#include "beamforge/beamio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <set>

#include "beamforge/dedisp.hpp"
#include "beamforge/error.hpp"

namespace beamforge {

namespace {

constexpr char kMagic[4] = {'B', 'M', 'F', 'B'};
constexpr std::size_t kBeamIdBytes = 64;

std::int64_t to_fixed(double value, double scale) { return std::llround(value * scale); }

struct QuantizedHeader {
  std::uint64_t channel_bw_mhz_milli;
  std::uint64_t f_top_mhz_milli;
  std::uint64_t t_samp_ns;
  std::int64_t ra_udeg;
  std::int64_t dec_udeg;
};

// Header frequencies are stored in milli-hertz, i.e. MHz * 1e9.
QuantizedHeader quantize(const ObservationParams &p) {
  return {static_cast<std::uint64_t>(to_fixed(p.channel_bw_mhz, 1e9)),
          static_cast<std::uint64_t>(to_fixed(p.f_top_mhz, 1e9)),
          static_cast<std::uint64_t>(to_fixed(p.t_samp_ms, 1e6)), to_fixed(p.ra_deg, 1e6),
          to_fixed(p.dec_deg, 1e6)};
}

template <typename T> void put_le(std::vector<std::uint8_t> &out, T value) {
  auto v = static_cast<std::make_unsigned_t<T>>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

template <typename T> T get_le(std::span<const std::uint8_t> bytes, std::size_t &pos) {
  std::make_unsigned_t<T> v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::make_unsigned_t<T>>(bytes[pos + i]) << (8 * i);
  }
  pos += sizeof(T);
  return static_cast<T>(v);
}

std::uint8_t padding_mask(std::uint32_t n_channels) {
  const std::uint32_t rem = n_channels % 8;
  return rem == 0 ? std::uint8_t{0xFF} : static_cast<std::uint8_t>(0xFF << (8 - rem));
}

void clear_padding_bits(const ObservationParams &p, std::span<std::uint8_t> data) {
  if (p.bits_per_sample != 1 || p.n_channels % 8 == 0) {
    return;
  }
  const std::size_t bps = p.bytes_per_slice();
  const std::uint8_t mask = padding_mask(p.n_channels);
  for (std::size_t off = bps - 1; off < data.size(); off += bps) {
    data[off] &= mask;
  }
}

double uniform01(std::mt19937_64 &rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

} // namespace

void ObservationParams::validate() const {
  auto bad = [](const std::string &what) { throw Error(ErrorCode::InvalidParams, what); };
  if (n_channels < 1) bad("n_channels must be >= 1");
  if (!(channel_bw_mhz > 0.0) || !std::isfinite(channel_bw_mhz)) bad("channel_bw must be > 0");
  if (!(t_samp_ms > 0.0) || !std::isfinite(t_samp_ms)) bad("t_samp must be > 0");
  if (n_samples < 1) bad("n_samples must be >= 1");
  if (bits_per_sample != 1 && bits_per_sample != 8) bad("bits_per_sample must be 1 or 8");
  if (!std::isfinite(f_top_mhz) || !(channel_freq_mhz(n_channels - 1) > 0.0))
    bad("lowest channel frequency must be positive");
  if (beam_id.size() > kBeamIdBytes) bad("beam_id longer than 64 bytes");
  if (beam_id.find('\0') != std::string::npos) bad("beam_id contains NUL");
  if (!(ra_deg >= 0.0 && ra_deg < 360.0)) bad("ra out of [0, 360)");
  if (!(dec_deg >= -90.0 && dec_deg <= 90.0)) bad("dec out of [-90, 90]");
}

ObservationParams ObservationParams::canonical() const {
  const QuantizedHeader q = quantize(*this);
  ObservationParams c = *this;
  c.channel_bw_mhz = static_cast<double>(q.channel_bw_mhz_milli) / 1e9;
  c.f_top_mhz = static_cast<double>(q.f_top_mhz_milli) / 1e9;
  c.t_samp_ms = static_cast<double>(q.t_samp_ns) / 1e6;
  c.ra_deg = static_cast<double>(q.ra_udeg) / 1e6;
  c.dec_deg = static_cast<double>(q.dec_udeg) / 1e6;
  return c;
}

bool operator==(const ObservationParams &a, const ObservationParams &b) {
  const QuantizedHeader qa = quantize(a);
  const QuantizedHeader qb = quantize(b);
  return a.n_channels == b.n_channels && a.n_samples == b.n_samples &&
         a.bits_per_sample == b.bits_per_sample && a.beam_id == b.beam_id &&
         qa.channel_bw_mhz_milli == qb.channel_bw_mhz_milli &&
         qa.f_top_mhz_milli == qb.f_top_mhz_milli && qa.t_samp_ns == qb.t_samp_ns &&
         qa.ra_udeg == qb.ra_udeg && qa.dec_udeg == qb.dec_udeg;
}

FilterbankBlock::FilterbankBlock(ObservationParams params) : params_(std::move(params)) {
  params_.validate();
  data_.assign(params_.payload_bytes(), 0);
}

FilterbankBlock::FilterbankBlock(ObservationParams params, std::vector<std::uint8_t> payload)
    : params_(std::move(params)), data_(std::move(payload)) {
  params_.validate();
  if (data_.size() != params_.payload_bytes()) {
    throw Error(ErrorCode::InvalidParams, "payload size does not match parameters");
  }
}

std::uint8_t FilterbankBlock::sample(std::uint32_t channel, std::uint64_t t) const {
  const std::size_t base = static_cast<std::size_t>(t) * params_.bytes_per_slice();
  if (params_.bits_per_sample == 8) {
    return data_[base + channel];
  }
  return (data_[base + channel / 8] >> (7 - channel % 8)) & 1u;
}

void FilterbankBlock::set_sample(std::uint32_t channel, std::uint64_t t, std::uint8_t value) {
  const std::size_t base = static_cast<std::size_t>(t) * params_.bytes_per_slice();
  if (params_.bits_per_sample == 8) {
    data_[base + channel] = value;
    return;
  }
  const auto bit = static_cast<std::uint8_t>(1u << (7 - channel % 8));
  std::uint8_t &byte = data_[base + channel / 8];
  byte = value ? static_cast<std::uint8_t>(byte | bit) : static_cast<std::uint8_t>(byte & ~bit);
}

void PulsarSpec::validate(const ObservationParams &target) const {
  auto bad = [](const std::string &what) { throw Error(ErrorCode::InvalidParams, what); };
  if (!(period_ms >= 2.0 * target.t_samp_ms)) bad("pulsar period below twice the sampling time");
  if (!(duty_cycle > 0.0 && duty_cycle < 1.0)) bad("duty cycle must be in (0, 1)");
  if (!(dm >= 0.0)) bad("dm must be >= 0");
  if (!(amplitude >= 0.0)) bad("amplitude must be >= 0");
  if (0.5 + amplitude > 1.0) bad("amplitude pushes on-pulse probability above 1");
}

void PointingMeta::validate() const {
  if (beams.size() != kBeamsPerPointing) {
    throw Error(ErrorCode::InvalidParams,
                "pointing " + pointing_id + " must have exactly 13 beams");
  }
  std::set<std::string> ids;
  for (const auto &b : beams) {
    if (!ids.insert(b.beam_id).second) {
      throw Error(ErrorCode::InvalidParams, "duplicate beam id " + b.beam_id);
    }
  }
}

FilterbankBlock synthesize_beam(const ObservationParams &params,
                                const std::optional<PulsarSpec> &pulsar, std::uint64_t seed) {
  params.validate();
  if (params.bits_per_sample != 1) {
    throw Error(ErrorCode::InvalidParams, "synthesis produces 1-bit data only");
  }
  if (pulsar) {
    pulsar->validate(params);
  }

  FilterbankBlock block(params);
  auto data = block.payload();

  std::mt19937_64 noise(seed);
  std::size_t i = 0;
  for (; i + 8 <= data.size(); i += 8) {
    const std::uint64_t word = noise();
    for (std::size_t k = 0; k < 8; ++k) {
      data[i + k] = static_cast<std::uint8_t>(word >> (8 * k));
    }
  }
  if (i < data.size()) {
    const std::uint64_t word = noise();
    for (std::size_t k = 0; i + k < data.size(); ++k) {
      data[i + k] = static_cast<std::uint8_t>(word >> (8 * k));
    }
  }
  clear_padding_bits(params, data);

  if (!pulsar) {
    return block;
  }

  std::mt19937_64 pulse_rng(seed ^ 0x9E3779B97F4A7C15ULL);
  const double period = pulsar->period_ms;
  const double on_width = pulsar->duty_cycle * period;
  const double tsamp = params.t_samp_ms;
  const double span_ms = static_cast<double>(params.n_samples) * tsamp;
  const double p_on = 0.5 + pulsar->amplitude;
  const auto n = static_cast<std::int64_t>(params.n_samples);

  for (std::uint32_t c = 0; c < params.n_channels; ++c) {
    const double delay_ms =
        1e3 * dm_delay(pulsar->dm, params.channel_freq_mhz(c), params.f_top_mhz);
    const auto k_first = static_cast<std::int64_t>(std::floor((-delay_ms - on_width) / period));
    const auto k_last = static_cast<std::int64_t>(std::floor((span_ms - delay_ms) / period));
    for (std::int64_t k = k_first; k <= k_last; ++k) {
      const double start = static_cast<double>(k) * period + delay_ms;
      auto s_lo = static_cast<std::int64_t>(std::ceil(start / tsamp));
      auto s_hi = static_cast<std::int64_t>(std::ceil((start + on_width) / tsamp));
      s_lo = std::max<std::int64_t>(s_lo, 0);
      s_hi = std::min<std::int64_t>(s_hi, n);
      for (std::int64_t s = s_lo; s < s_hi; ++s) {
        block.set_sample(c, static_cast<std::uint64_t>(s), uniform01(pulse_rng) < p_on ? 1 : 0);
      }
    }
  }
  return block;
}

FilterbankBlock decimate(const FilterbankBlock &block, std::uint32_t chan_factor,
                         std::uint32_t time_factor) {
  const ObservationParams &in = block.params();
  if (chan_factor == 0 || time_factor == 0) {
    throw Error(ErrorCode::InvalidParams, "decimation factors must be >= 1");
  }
  if (in.bits_per_sample != 1) {
    throw Error(ErrorCode::InvalidParams, "decimate expects 1-bit input");
  }
  if (static_cast<std::uint64_t>(chan_factor) * time_factor > 255) {
    throw Error(ErrorCode::InvalidParams, "chan_factor * time_factor must fit in 8 bits");
  }
  if (in.n_channels % chan_factor != 0) {
    throw Error(ErrorCode::NotDivisible, "n_channels not divisible by chan_factor");
  }
  if (in.n_samples % time_factor != 0) {
    throw Error(ErrorCode::NotDivisible, "n_samples not divisible by time_factor");
  }

  ObservationParams out = in;
  out.n_channels = in.n_channels / chan_factor;
  out.channel_bw_mhz = in.channel_bw_mhz * chan_factor;
  out.f_top_mhz = in.f_top_mhz - 0.5 * (chan_factor - 1) * in.channel_bw_mhz;
  out.t_samp_ms = in.t_samp_ms * time_factor;
  out.n_samples = in.n_samples / time_factor;
  out.bits_per_sample = 8;

  FilterbankBlock result(out);
  auto dst = result.payload();
  const auto src = block.payload();
  const std::size_t in_bps = in.bytes_per_slice();
  const std::size_t n_out = out.n_channels;
  const bool byte_aligned = 8 % chan_factor == 0;
  const auto group_mask = static_cast<std::uint8_t>((1u << std::min<std::uint32_t>(chan_factor, 8)) - 1);
  const std::uint32_t groups_per_byte = byte_aligned ? 8 / chan_factor : 0;

  for (std::uint64_t s_out = 0; s_out < out.n_samples; ++s_out) {
    std::uint8_t *acc = dst.data() + s_out * n_out;
    for (std::uint32_t j = 0; j < time_factor; ++j) {
      const std::uint8_t *slice = src.data() + (s_out * time_factor + j) * in_bps;
      if (byte_aligned) {
        for (std::size_t b = 0; b < in_bps; ++b) {
          const std::uint8_t v = slice[b];
          for (std::uint32_t g = 0; g < groups_per_byte; ++g) {
            const std::size_t group = b * groups_per_byte + g;
            if (group >= n_out) break;
            const auto bits = static_cast<std::uint8_t>((v >> (8 - chan_factor * (g + 1))) & group_mask);
            acc[group] = static_cast<std::uint8_t>(acc[group] + std::popcount(bits));
          }
        }
      } else {
        for (std::uint32_t c = 0; c < in.n_channels; ++c) {
          acc[c / chan_factor] = static_cast<std::uint8_t>(
              acc[c / chan_factor] + ((slice[c / 8] >> (7 - c % 8)) & 1u));
        }
      }
    }
  }
  return result;
}

FilterbankBlock convert_to_timeseries_format(const FilterbankBlock &block) {
  const ObservationParams &p = block.params();
  try {
    p.validate();
  } catch (const Error &e) {
    throw Error(ErrorCode::CorruptHeader, e.what());
  }
  const auto payload = block.payload();
  if (payload.size() < p.payload_bytes()) {
    throw Error(ErrorCode::TruncatedData, "payload shorter than header implies");
  }
  if (payload.size() > p.payload_bytes()) {
    throw Error(ErrorCode::CorruptHeader, "payload longer than header implies");
  }
  std::vector<std::uint8_t> data(payload.begin(), payload.end());
  clear_padding_bits(p, data);
  return FilterbankBlock(p.canonical(), std::move(data));
}

std::uint64_t raw_beam_size_bytes(const ObservationParams &params, std::uint64_t header_bytes) {
  params.validate();
  return static_cast<std::uint64_t>(params.bytes_per_slice()) * params.n_samples + header_bytes;
}

std::vector<std::uint8_t> encode_block(const FilterbankBlock &block) {
  const ObservationParams &p = block.params();
  const QuantizedHeader q = quantize(p);
  std::vector<std::uint8_t> out;
  out.reserve(kBlockHeaderBytes + block.payload().size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_le<std::uint16_t>(out, kBlockFormatVersion);
  put_le<std::uint32_t>(out, p.n_channels);
  put_le<std::uint64_t>(out, q.channel_bw_mhz_milli);
  put_le<std::uint64_t>(out, q.f_top_mhz_milli);
  put_le<std::uint64_t>(out, q.t_samp_ns);
  put_le<std::uint64_t>(out, p.n_samples);
  out.push_back(p.bits_per_sample);
  std::array<std::uint8_t, kBeamIdBytes> id{};
  std::copy(p.beam_id.begin(), p.beam_id.end(), id.begin());
  out.insert(out.end(), id.begin(), id.end());
  put_le<std::int64_t>(out, q.ra_udeg);
  put_le<std::int64_t>(out, q.dec_udeg);
  out.insert(out.end(), block.payload().begin(), block.payload().end());
  return out;
}

FilterbankBlock decode_block(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic)) {
    throw Error(ErrorCode::TruncatedData, "file shorter than magic");
  }
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw Error(ErrorCode::CorruptHeader, "bad magic");
  }
  if (bytes.size() < kBlockHeaderBytes) {
    throw Error(ErrorCode::TruncatedData, "file shorter than header");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = get_le<std::uint16_t>(bytes, pos);
  if (version != kBlockFormatVersion) {
    throw Error(ErrorCode::CorruptHeader, "unsupported format version " + std::to_string(version));
  }
  ObservationParams p;
  p.n_channels = get_le<std::uint32_t>(bytes, pos);
  p.channel_bw_mhz = static_cast<double>(get_le<std::uint64_t>(bytes, pos)) / 1e9;
  p.f_top_mhz = static_cast<double>(get_le<std::uint64_t>(bytes, pos)) / 1e9;
  p.t_samp_ms = static_cast<double>(get_le<std::uint64_t>(bytes, pos)) / 1e6;
  p.n_samples = get_le<std::uint64_t>(bytes, pos);
  p.bits_per_sample = bytes[pos++];
  const auto *id_begin = reinterpret_cast<const char *>(bytes.data() + pos);
  p.beam_id.assign(id_begin, strnlen(id_begin, kBeamIdBytes));
  pos += kBeamIdBytes;
  p.ra_deg = static_cast<double>(get_le<std::int64_t>(bytes, pos)) / 1e6;
  p.dec_deg = static_cast<double>(get_le<std::int64_t>(bytes, pos)) / 1e6;
  try {
    p.validate();
  } catch (const Error &e) {
    throw Error(ErrorCode::CorruptHeader, e.what());
  }
  const std::size_t expected = p.payload_bytes();
  const std::size_t actual = bytes.size() - pos;
  if (actual < expected) {
    throw Error(ErrorCode::TruncatedData, "payload has " + std::to_string(actual) +
                                              " bytes, header implies " + std::to_string(expected));
  }
  if (actual > expected) {
    throw Error(ErrorCode::CorruptHeader, "payload has " + std::to_string(actual) +
                                              " bytes, header implies " + std::to_string(expected));
  }
  return FilterbankBlock(p, std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end()));
}

void write_block(const FilterbankBlock &block, std::ostream &out) {
  const auto bytes = encode_block(block);
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw Error(ErrorCode::IoError, "write failed");
  }
}

void write_block(const FilterbankBlock &block, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  }
  write_block(block, out);
}

FilterbankBlock read_block(std::istream &in) {
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) {
    throw Error(ErrorCode::IoError, "read failed");
  }
  return decode_block(bytes);
}

FilterbankBlock read_block(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open " + path.string());
  }
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) {
    throw Error(ErrorCode::IoError, "cannot stat " + path.string());
  }
  std::vector<std::uint8_t> bytes(size);
  in.read(reinterpret_cast<char *>(bytes.data()), static_cast<std::streamsize>(size));
  if (static_cast<std::uint64_t>(in.gcount()) != size) {
    throw Error(ErrorCode::IoError, "short read on " + path.string());
  }
  return decode_block(bytes);
}

} // namespace beamforge
