#include "htc/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace htc {

namespace {

struct KeyDefault {
    const char* key;
    const char* value;
};

// Canonical key set; order here is the order in resolved_config and
// checkpoint headers.
const KeyDefault kKeys[] = {
    {"run.id", "run"},
    {"run.out", "runs"},
    {"run.seed", "7"},
    {"data.n_s", "8"},
    {"data.n_d_bins", "8"},
    {"data.n_train", "1024"},
    {"data.n_test", "256"},
    {"data.image_size", "32"},
    {"data.noise_sigma", "0.05"},
    {"data.stripe_freq", "4"},
    {"quant.groups", "4"},
    {"quant.entries", "32"},
    {"quant.group_dim", "4"},
    {"quant.downsample", "8"},
    {"quant.kmeans_iters", "25"},
    {"enc.patch_size", "8"},
    {"enc.d_enc", "32"},
    {"layout.n_d", "4"},
    {"layout.n_v", "16"},
    {"layout.n_b", "1"},
    {"layout.n_w", "2"},
    {"layout.fusion", "pre"},
    {"layout.mask", "star"},
    {"model.d_model", "64"},
    {"model.n_heads", "4"},
    {"model.n_layers", "2"},
    {"model.d_ff", "256"},
    {"model.h_d", "128"},
    {"model.proj_depth", "2"},
    {"model.max_text_len", "4"},
    {"train.lr", "0.001"},
    {"train.beta1", "0.9"},
    {"train.beta2", "0.999"},
    {"train.weight_decay", "0.01"},
    {"train.warmup_steps", "400"},
    {"train.total_steps", "3000"},
    {"train.batch_size", "12"},
    {"train.beta_kl", "0.1"},
    {"probe.samples", "512"},
    {"probe.iters", "500"},
    {"probe.lr", "0.1"},
    {"attn.samples", "64"},
    {"sweep.axis", "channel"},
    {"sweep.values", ""},
    {"sweep.seeds", "1,2,3"},
    {"sweep.reference", "true"},
    {"io.checkpoint", ""},
};

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace

RunConfig RunConfig::defaults() {
    RunConfig c;
    for (const auto& kd : kKeys) c.kv_.emplace_back(kd.key, kd.value);
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    HTC_CHECK(f.good(), io, "cannot open config file " + path);
    RunConfig c = defaults();
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        try {
            c.set_line(t);
        } catch (const Error& e) {
            fail(ErrorCode::config,
                 path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return c;
}

RunConfig RunConfig::from_lines(const std::vector<std::pair<std::string, std::string>>& lines) {
    RunConfig c = defaults();
    for (const auto& [k, v] : lines) c.set(k, v);
    return c;
}

int RunConfig::index(const std::string& key) const {
    for (size_t i = 0; i < kv_.size(); ++i)
        if (kv_[i].first == key) return static_cast<int>(i);
    return -1;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const int i = index(key);
    HTC_CHECK(i >= 0, config, "unknown config key '" + key + "'");
    kv_[static_cast<size_t>(i)].second = value;
}

void RunConfig::set_line(const std::string& line) {
    const size_t eq = line.find('=');
    HTC_CHECK(eq != std::string::npos, config, "expected key=value, got '" + line + "'");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
}

const std::string& RunConfig::get(const std::string& key) const {
    const int i = index(key);
    HTC_CHECK(i >= 0, config, "unknown config key '" + key + "'");
    return kv_[static_cast<size_t>(i)].second;
}

bool RunConfig::is_default(const std::string& key) const {
    for (const auto& kd : kKeys)
        if (key == kd.key) return get(key) == kd.value;
    fail(ErrorCode::config, "unknown config key '" + key + "'");
}

int RunConfig::get_int(const std::string& key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    const long x = std::strtol(v.c_str(), &end, 10);
    HTC_CHECK(end && *end == '\0' && !v.empty(), config, "config key " + key + ": '" + v + "' is not an integer");
    return static_cast<int>(x);
}

double RunConfig::get_double(const std::string& key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    HTC_CHECK(end && *end == '\0' && !v.empty(), config, "config key " + key + ": '" + v + "' is not a number");
    return x;
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(ErrorCode::config, "config key " + key + ": '" + v + "' is not a boolean");
}

uint64_t RunConfig::get_u64(const std::string& key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    HTC_CHECK(end && *end == '\0' && !v.empty(), config, "config key " + key + ": '" + v + "' is not an integer");
    return static_cast<uint64_t>(x);
}

std::string RunConfig::resolved_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
    return os.str();
}

std::vector<std::pair<std::string, std::string>> RunConfig::lines() const {
    return kv_;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, ',')) {
        const std::string t = trim(cur);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

} // namespace htc
