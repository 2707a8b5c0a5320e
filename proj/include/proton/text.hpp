#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace proton {

/// Shortest representation that round-trips exactly.
std::string format_double(double v);
/// Fixed number of decimals, for report tables.
std::string format_fixed(double v, int decimals);

double parse_double(std::string_view s);
std::int64_t parse_int(std::string_view s);
bool parse_bool(std::string_view s);

std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

template <typename T, typename Fmt>
std::string join(const std::vector<T>& items, Fmt fmt, const char* sep = ",") {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += fmt(items[i]);
    }
    return out;
}

std::vector<double> parse_double_list(std::string_view s);
std::vector<std::int64_t> parse_int_list(std::string_view s);

}  // namespace proton
