#pragma once

#include <map>
#include <string>

namespace dbn {

/// Flat key = value configuration. File syntax: one pair per line,
/// '#' comments, blank lines ignored. Later sources override earlier ones.
class Config {
public:
    void load_file(const std::string& path);
    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;
    /// Copies every key from `other` over this one.
    void merge_from(const Config& other);

    std::string get(const std::string& key, const std::string& fallback) const;
    long get_int(const std::string& key, long fallback) const;
    double get_real(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    /// Serialized key = value lines, sorted; written atomically.
    void save_file(const std::string& path) const;
    std::string to_string() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace dbn
