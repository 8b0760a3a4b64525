#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace gbi {

// Flat key=value run configuration. '#' starts a comment, keys outside the
// known set are rejected, and resolved() emits every key with its effective
// value so each run directory is self-describing.
class RunConfig {
public:
    static const std::map<std::string, std::string>& defaults();

    static RunConfig from_file(const std::string& path);
    static RunConfig from_string(const std::string& text);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key) const;
    int64_t get_int(const std::string& key) const;
    uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    std::string resolved() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace gbi
