#include "lapsynth/keyvalue.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace lapsynth {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<KeyValue> parse_key_values(const std::string& text) {
    std::vector<KeyValue> out;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const auto hash = raw.find('#');
        const std::string body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ParseError(line, "expected 'key = value'");
        KeyValue kv{trim(body.substr(0, eq)), trim(body.substr(eq + 1)), line};
        if (kv.key.empty()) throw ParseError(line, "missing key");
        if (kv.value.empty()) throw ParseError(line, "missing value for '" + kv.key + "'");
        if (!seen.insert(kv.key).second) throw ParseError(line, "duplicate key '" + kv.key + "'");
        out.push_back(std::move(kv));
    }
    return out;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

bool parse_bool(const std::string& value, std::size_t line) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ParseError(line, "not a boolean: '" + value + "'");
}

std::vector<int> parse_int_list(const std::string& value, std::size_t line) {
    std::vector<int> out;
    std::stringstream in(value);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(parse_number<int>(trim(item), line));
    if (out.empty()) throw ParseError(line, "empty list");
    return out;
}

std::string format_double(double v) {
    char buf[64];
    for (int precision = 1; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof buf, "%.*g", precision, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

}  // namespace lapsynth
