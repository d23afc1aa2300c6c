#pragma once

#include <map>
#include <string>
#include <vector>

namespace lsic {

// Flat dotted-key configuration ("train.batch_size = 8"). Lines starting
// with '#' are comments. CLI overrides use the same "key=value" syntax. The
// resolved config serializes deterministically (sorted keys) and rides along
// in every checkpoint.
class Config {
public:
    static Config from_file(const std::string& path);
    static Config parse(const std::string& text);

    void set(const std::string& key, const std::string& value);
    void apply_override(const std::string& key_equals_value);
    bool has(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const;
    std::vector<double> get_double_list(const std::string& key, std::vector<double> fallback) const;

    std::string serialize() const;
    const std::map<std::string, std::string>& values() const { return values_; }

    // true when every "model.*" key present in both configs agrees
    bool model_compatible(const Config& other) const;

private:
    std::map<std::string, std::string> values_;
};

} // namespace lsic
