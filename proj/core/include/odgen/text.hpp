#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace odgen::text {

/// Shortest decimal form that round-trips to the same double. Used for every
/// numeric field the toolkit writes, so save/load/save is byte-stable.
std::string format_double(double v);

/// Strict double parse of a whole field; throws std::invalid_argument with
/// the offending text otherwise.
double parse_double(std::string_view s);

/// Strict nonnegative integer parse.
long parse_long(std::string_view s);

/// Splits one CSV line on commas. The toolkit's formats never quote or
/// escape, so identifiers must not contain commas (enforced on write).
std::vector<std::string> split_csv_line(const std::string& line);

/// Strips a trailing '\r' (tolerates CRLF input files).
std::string strip_cr(std::string line);

}  // namespace odgen::text
