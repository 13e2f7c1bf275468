#include "mmfusion/text_format.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>

#include "binary_io.hpp"
#include "mmfusion/error.hpp"

namespace mmfusion {

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_real(std::string_view text, std::string_view key) {
    const std::string s(trim(text));
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
        throw InputError("key '" + std::string(key) + "': cannot parse '" + s + "' as a real");
    }
    return v;
}

std::uint64_t parse_u64(std::string_view text, std::string_view key) {
    const std::string s(trim(text));
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || s.front() == '-' || end != s.c_str() + s.size() || errno == ERANGE) {
        throw InputError("key '" + std::string(key) + "': cannot parse '" + s + "' as an unsigned integer");
    }
    return v;
}

std::string_view trim(std::string_view s) noexcept {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::string to_kv_text(const KeyValues& kv) {
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

KeyValues parse_kv_text(std::string_view text) {
    KeyValues kv;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const std::string_view line = trim(text.substr(0, nl));
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw InputError("malformed key-value line '" + std::string(line) + "'");
        }
        kv.emplace_back(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
    }
    return kv;
}

const std::string& kv_get(const KeyValues& kv, std::string_view key) {
    for (const auto& [k, v] : kv) {
        if (k == key) return v;
    }
    throw InputError("missing key '" + std::string(key) + "'");
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    detail::write_file_atomic(path, text);
}

}  // namespace mmfusion
