#pragma once

#include <string>
#include <string_view>

namespace cmla {

/// Shortest form that round-trips: 17 significant digits, %g style.
std::string format_double(double v);

/// Parses a full token as a double; false on any trailing garbage.
bool parse_double(std::string_view token, double& out) noexcept;
bool parse_size(std::string_view token, std::size_t& out) noexcept;

}  // namespace cmla
