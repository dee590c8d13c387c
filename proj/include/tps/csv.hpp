#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace tps::csv {

/// Splits one CSV record. Double-quoted fields may contain commas and "" escapes.
std::vector<std::string> split_line(std::string_view line);

/// Reads all records, skipping empty lines. Quoted fields spanning lines are
/// not supported.
std::vector<std::vector<std::string>> read_all(std::istream& in);

std::string escape(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);

/// Shortest decimal representation that round-trips to the same double.
std::string format_double(double value);

}  // namespace tps::csv
