#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace decomp::csv {

using Row = std::vector<std::string>;

// RFC 4180 style reader: quoted fields may contain commas, quotes ("")
// and newlines. Lines whose first character is '#' are comments. Blank
// lines are skipped.
std::vector<Row> parse(std::string_view text);
std::vector<Row> read(std::istream& in);

void write_row(std::ostream& out, const Row& row);

// Shortest text that parses back to the identical double.
std::string format_double(double value);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

}  // namespace decomp::csv
