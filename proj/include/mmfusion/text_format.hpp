#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mmfusion {

/// printf %.17g; round-trips every finite double.
std::string format_real(double v);

double parse_real(std::string_view text, std::string_view key);
std::uint64_t parse_u64(std::string_view text, std::string_view key);

/// Ordered `key=value` lines, the canonical text embedded in checkpoints.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

std::string to_kv_text(const KeyValues& kv);
KeyValues parse_kv_text(std::string_view text);
/// Value for key, or InputError naming the missing key.
const std::string& kv_get(const KeyValues& kv, std::string_view key);

std::string_view trim(std::string_view s) noexcept;

/// Whole-file write through a temp file and rename; InputError on failure.
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace mmfusion
