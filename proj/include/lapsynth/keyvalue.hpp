#pragma once

#include <cstddef>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "lapsynth/errors.hpp"

namespace lapsynth {

struct KeyValue {
    std::string key;
    std::string value;
    std::size_t line = 0;
};

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
/// Repeated keys and malformed lines raise ParseError.
std::vector<KeyValue> parse_key_values(const std::string& text);

std::string read_text_file(const std::filesystem::path& path);

template <class T>
T parse_number(const std::string& value, std::size_t line) {
    std::istringstream in(value);
    T out{};
    in >> out;
    if (!in || !(in >> std::ws).eof()) throw ParseError(line, "not a number: '" + value + "'");
    return out;
}

bool parse_bool(const std::string& value, std::size_t line);
std::vector<int> parse_int_list(const std::string& value, std::size_t line);

/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace lapsynth
