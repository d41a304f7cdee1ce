#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace beamforge::detail {

std::string read_file(const std::filesystem::path &path);
std::optional<std::string> read_file_if_exists(const std::filesystem::path &path);
/// Temp file in the same directory, fsync, then rename over `path`.
void write_file_atomic(const std::filesystem::path &path, std::string_view content);
/// Single O_APPEND write, so concurrent appenders do not interleave lines.
void append_to_file(const std::filesystem::path &path, std::string_view content);
std::string random_hex(std::size_t n_chars);
std::string host_name();

} // namespace beamforge::detail
