#include "sslam/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace sslam {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size()) throw FormatError("config: bad value for " + key + ": " + text);
    return v;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw FormatError("config line " + std::to_string(lineno) + ": empty key");
        cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

const std::string* KeyValueConfig::find(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return nullptr;
    read_.insert(key);
    return &it->second;
}

void KeyValueConfig::get(const std::string& key, double& value) const {
    if (const auto* s = find(key)) value = parse_number<double>(key, *s);
}

void KeyValueConfig::get(const std::string& key, int& value) const {
    if (const auto* s = find(key)) value = parse_number<int>(key, *s);
}

void KeyValueConfig::get(const std::string& key, std::uint64_t& value) const {
    if (const auto* s = find(key)) value = parse_number<std::uint64_t>(key, *s);
}

void KeyValueConfig::get(const std::string& key, bool& value) const {
    if (const auto* s = find(key)) {
        if (*s == "true" || *s == "1") {
            value = true;
        } else if (*s == "false" || *s == "0") {
            value = false;
        } else {
            throw FormatError("config: bad boolean for " + key + ": " + *s);
        }
    }
}

void KeyValueConfig::get(const std::string& key, std::string& value) const {
    if (const auto* s = find(key)) value = *s;
}

void KeyValueConfig::check_consumed() const {
    for (const auto& [k, v] : values_) {
        if (!read_.count(k)) throw FormatError("config: unknown key " + k);
    }
}

}  // namespace sslam
