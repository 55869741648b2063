#include "decomp/csv.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <istream>
#include <iterator>
#include <ostream>
#include <stdexcept>

#include "decomp/error.hpp"

namespace decomp::csv {

std::vector<Row> parse(std::string_view text) {
    std::vector<Row> rows;
    Row row;
    std::string field;
    bool in_quotes = false;
    bool at_line_start = true;
    bool field_started = false;
    std::size_t i = 0;
    const std::size_t n = text.size();

    auto end_row = [&] {
        if (field_started || !row.empty() || !field.empty()) {
            row.push_back(std::move(field));
            rows.push_back(std::move(row));
        }
        row.clear();
        field.clear();
        field_started = false;
        at_line_start = true;
    };

    while (i < n) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < n && text[i + 1] == '"') {
                    field.push_back('"');
                    i += 2;
                    continue;
                }
                in_quotes = false;
            } else {
                field.push_back(c);
            }
            ++i;
            continue;
        }
        if (at_line_start && c == '#') {
            while (i < n && text[i] != '\n') ++i;
            ++i;
            continue;
        }
        at_line_start = false;
        if (c == '"') {
            in_quotes = true;
            field_started = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            field_started = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < n && text[i + 1] == '\n') ++i;
            end_row();
        } else {
            field.push_back(c);
            field_started = true;
        }
        ++i;
    }
    if (in_quotes) throw ParseError("csv: unterminated quoted field");
    end_row();
    return rows;
}

std::vector<Row> read(std::istream& in) {
    std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return parse(text);
}

void write_row(std::ostream& out, const Row& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out << ',';
        const std::string& f = row[i];
        if (f.find_first_of(",\"\n\r") != std::string::npos) {
            out << '"';
            for (char c : f) {
                if (c == '"') out << '"';
                out << c;
            }
            out << '"';
        } else {
            out << f;
        }
    }
    out << '\n';
}

std::string format_double(double value) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

}  // namespace decomp::csv
