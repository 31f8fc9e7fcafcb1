#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "sslam/types.hpp"

namespace sslam {

/// Flat "key = value" text with '#' comments. Unknown keys are reported by
/// check_consumed so typos do not pass silently.
class KeyValueConfig {
public:
    KeyValueConfig() = default;
    static KeyValueConfig parse(const std::string& text);
    static KeyValueConfig load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    /// Replaces `value` when the key is present; throws FormatError on a bad number.
    void get(const std::string& key, double& value) const;
    void get(const std::string& key, int& value) const;
    void get(const std::string& key, std::uint64_t& value) const;
    void get(const std::string& key, bool& value) const;
    void get(const std::string& key, std::string& value) const;

    /// Throws FormatError naming the first key never read.
    void check_consumed() const;

private:
    const std::string* find(const std::string& key) const;

    std::map<std::string, std::string> values_;
    mutable std::set<std::string> read_;
};

}  // namespace sslam
