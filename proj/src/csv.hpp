#pragma once

#include <cstdio>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace second_opinion::csv {

/// Splits one CSV line. Double-quoted fields may contain commas and "" escapes.
std::vector<std::string> split_line(std::string_view line);

/// Reads the next non-empty line, stripping CR and a leading UTF-8 BOM on the
/// first line. Returns nullopt at end of input.
std::optional<std::string> next_line(std::istream& in, bool first);

/// Parses a full-field real. Rejects trailing garbage; NaN/inf are returned as
/// parsed so callers can report them distinctly.
std::optional<double> parse_real(std::string_view field);

std::string quote_if_needed(std::string_view field);

/// Fixed-point with six decimals, as used by every report file.
inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/// Seventeen significant digits; reads back to the same double.
inline std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace second_opinion::csv
