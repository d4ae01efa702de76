// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace siftlab {

/// Flat `key = value` run configuration over a fixed schema.
///
/// Every key has a type and default; unknown keys and badly typed values are
/// rejected with ConfigError. Text form: one `key = value` per line, `#`
/// starts a comment.
class RunConfig {
public:
    enum class Type { Int, Float, String, Bool };

    RunConfig();

    static RunConfig from_text(const std::string& text);
    static RunConfig from_file(const std::filesystem::path& path);

    /// Applies `key=value`.
    void set_override(const std::string& assignment);
    void set(const std::string& key, const std::string& value);

    std::int64_t get_int(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    const std::string& get_string(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<std::string> get_list(const std::string& key) const;  // comma separated

    /// All keys, sorted, one `key = value` per line.
    std::string to_text() const;
    const std::map<std::string, std::string>& values() const noexcept { return values_; }

    /// Keys naming random seeds.
    static std::vector<std::string> seed_keys();

private:
    const std::string& raw(const std::string& key, Type type) const;
    std::map<std::string, std::string> values_;
};

}  // namespace siftlab
