#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "htc/common.hpp"

namespace htc {

// Flat `key = value` configuration with a closed key set. Unknown keys are
// rejected; every key is echoed (in canonical order) into each run's
// resolved_config for provenance.
class RunConfig {
public:
    static RunConfig defaults();
    static RunConfig from_file(const std::string& path);
    static RunConfig from_lines(const std::vector<std::pair<std::string, std::string>>& lines);

    void set(const std::string& key, const std::string& value);
    void set_line(const std::string& line); // "key=value" or "key = value"
    const std::string& get(const std::string& key) const;
    bool is_default(const std::string& key) const;

    int get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    uint64_t get_u64(const std::string& key) const;

    std::string resolved_text() const;
    std::vector<std::pair<std::string, std::string>> lines() const;

private:
    std::vector<std::pair<std::string, std::string>> kv_; // canonical order
    int index(const std::string& key) const;
};

std::vector<std::string> split_csv(const std::string& s);

} // namespace htc
