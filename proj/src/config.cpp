#include "record/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "record/error.hpp"

#ifndef RECORD_DEFAULT_FIXTURES_DIR
#define RECORD_DEFAULT_FIXTURES_DIR "fixtures"
#endif

namespace record {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

double to_double(std::string_view key, std::string_view v) {
    const std::string s = trim(v);
    char* end = nullptr;
    const double d = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(d))
        throw InvalidConfig(std::string(key) + ": expected a number, got '" + s + "'");
    return d;
}

long long to_int(std::string_view key, std::string_view v) {
    const std::string s = trim(v);
    long long out = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size())
        throw InvalidConfig(std::string(key) + ": expected an integer, got '" + s + "'");
    return out;
}

bool to_bool(std::string_view key, std::string_view v) {
    const std::string s = trim(v);
    if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "off" || s == "no") return false;
    throw InvalidConfig(std::string(key) + ": expected a boolean, got '" + s + "'");
}

std::string fmt_double(double d) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", d);
    return buf;
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F&& f) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + f(xs[i]);
    return out;
}

}  // namespace

int GuidanceConfig::active_steps() const {
    return static_cast<int>(std::ceil(loss_active_fraction * T2 - 1e-9));
}

std::vector<double> GuidanceConfig::alpha_schedule() const {
    if (!alpha_override.empty()) {
        if (alpha_override.size() != static_cast<std::size_t>(T2))
            throw InvalidConfig("alpha_schedule must list exactly T2 values");
        return alpha_override;
    }
    std::vector<double> alphas(static_cast<std::size_t>(T2), 0.0);
    const int active = active_steps();
    for (int i = 0; i < active && i < T2; ++i)
        alphas[static_cast<std::size_t>(i)] = alpha_max * (1.0 - static_cast<double>(i) / active);
    return alphas;
}

void GuidanceConfig::validate() const {
    if (T1 < 1 || T2 < 1) throw InvalidConfig("T1 and T2 must be positive");
    if (T1 > T2) throw InvalidConfig("T1 must not exceed T2");
    if (k < 1) throw InvalidConfig("k must be at least 1");
    if (gamma < 0) throw InvalidConfig("gamma must be non-negative");
    if (!(cfg_scale >= 1.0)) throw InvalidConfig("cfg_scale must be >= 1");
    if (!(alpha_max >= 0.0)) throw InvalidConfig("alpha_max must be >= 0");
    for (double a : alpha_override)
        if (!(a >= 0.0) || !std::isfinite(a)) throw InvalidConfig("alpha_schedule values must be finite and >= 0");
    if (!alpha_override.empty() && alpha_override.size() != static_cast<std::size_t>(T2))
        throw InvalidConfig("alpha_schedule must list exactly T2 values");
    if (!(loss_active_fraction > 0.0 && loss_active_fraction <= 1.0))
        throw InvalidConfig("loss_active_fraction must lie in (0, 1]");
    if (!(loss_weights.inner_box >= 0 && loss_weights.outer_box >= 0 && loss_weights.corner >= 0))
        throw InvalidConfig("loss weights must be >= 0");
    if (!(top_fraction > 0.0 && top_fraction <= 1.0)) throw InvalidConfig("top_fraction must lie in (0, 1]");
    if (corner_band < 1) throw InvalidConfig("corner_band must be >= 1");
    if (!(change_threshold >= 0.0 && change_threshold <= 1.0))
        throw InvalidConfig("change_threshold must lie in [0, 1]");
    for (int r : attention_resolutions)
        if (r < 1) throw InvalidConfig("attention resolutions must be positive");
}

void RunConfig::set(std::string_view key_in, std::string_view value_in) {
    const std::string key = trim(key_in);
    const std::string value = trim(value_in);
    auto& g = guidance;
    if (key == "T1") g.T1 = static_cast<int>(to_int(key, value));
    else if (key == "T2") g.T2 = static_cast<int>(to_int(key, value));
    else if (key == "k") g.k = static_cast<int>(to_int(key, value));
    else if (key == "gamma") g.gamma = static_cast<int>(to_int(key, value));
    else if (key == "cfg_scale") g.cfg_scale = to_double(key, value);
    else if (key == "alpha_max") g.alpha_max = to_double(key, value);
    else if (key == "alpha_schedule") {
        g.alpha_override.clear();
        if (!value.empty())
            for (const auto& v : split(value, ',')) g.alpha_override.push_back(to_double(key, v));
    } else if (key == "loss_active_fraction") g.loss_active_fraction = to_double(key, value);
    else if (key == "w_inner_box") g.loss_weights.inner_box = to_double(key, value);
    else if (key == "w_outer_box") g.loss_weights.outer_box = to_double(key, value);
    else if (key == "w_corner") g.loss_weights.corner = to_double(key, value);
    else if (key == "top_fraction") g.top_fraction = to_double(key, value);
    else if (key == "corner_band") g.corner_band = static_cast<int>(to_int(key, value));
    else if (key == "change_threshold") g.change_threshold = to_double(key, value);
    else if (key == "substitution") g.substitution = to_bool(key, value);
    else if (key == "handoff") {
        if (value == "seed") g.handoff = Handoff::SeedReuse;
        else if (value == "continue") g.handoff = Handoff::LatentContinuation;
        else throw InvalidConfig("handoff must be 'seed' or 'continue'");
    } else if (key == "attention_resolutions") {
        g.attention_resolutions.clear();
        if (!value.empty())
            for (const auto& v : split(value, ',')) g.attention_resolutions.push_back(static_cast<int>(to_int(key, v)));
    } else if (key == "seed") {
        const std::string s = trim(value);
        std::uint64_t out = 0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size())
            throw InvalidConfig("seed must be an unsigned 64-bit integer, got '" + s + "'");
        seed = out;
    } else if (key == "backbone") backbone = value;
    else if (key == "ldm_model") ldm_model = value;
    else if (key == "ldm_device") ldm_device = value;
    else if (key == "vlm") vlm = value;
    else if (key == "vlm_endpoint") vlm_endpoint = value;
    else if (key == "vlm_model") vlm_model = value;
    else if (key == "vlm_api_key_env") vlm_api_key_env = value;
    else if (key == "vlm_cache_dir") vlm_cache_dir = value;
    else if (key == "vlm_retries") vlm_retries = static_cast<int>(to_int(key, value));
    else if (key == "vlm_rate_limit_ms") vlm_rate_limit_ms = static_cast<int>(to_int(key, value));
    else if (key == "vlm_timeout_s") vlm_timeout_s = static_cast<int>(to_int(key, value));
    else if (key == "mock_pose_reply") mock_pose_reply = value;
    else if (key == "mock_layout_reply") mock_layout_reply = value;
    else if (key == "mock_replies_file") mock_replies_file = value;
    else if (key == "keypoints") keypoints = value;
    else if (key == "keypoint_fixture_dir") keypoint_fixture_dir = value;
    else if (key == "keypoint_margin") keypoint_margin = to_double(key, value);
    else if (key == "embedder") embedder = value;
    else if (key == "embedder_endpoint") embedder_endpoint = value;
    else if (key == "fixtures_dir") fixtures_dir = value;
    else if (key == "workers") workers = static_cast<int>(to_int(key, value));
    else if (key == "gerund_overrides") {
        gerund_overrides.clear();
        if (!value.empty())
            for (const auto& pair : split(value, ',')) {
                const auto kv = split(pair, ':');
                if (kv.size() != 2 || kv[0].empty() || kv[1].empty())
                    throw InvalidConfig("gerund_overrides entries look like base:gerund");
                gerund_overrides[kv[0]] = kv[1];
            }
    } else {
        throw InvalidConfig("unknown config key '" + key + "'");
    }
}

std::map<std::string, std::string> RunConfig::to_map() const {
    const auto& g = guidance;
    std::map<std::string, std::string> m;
    m["T1"] = std::to_string(g.T1);
    m["T2"] = std::to_string(g.T2);
    m["k"] = std::to_string(g.k);
    m["gamma"] = std::to_string(g.gamma);
    m["cfg_scale"] = fmt_double(g.cfg_scale);
    m["alpha_max"] = fmt_double(g.alpha_max);
    m["alpha_schedule"] = join(g.alpha_override, fmt_double);
    m["loss_active_fraction"] = fmt_double(g.loss_active_fraction);
    m["w_inner_box"] = fmt_double(g.loss_weights.inner_box);
    m["w_outer_box"] = fmt_double(g.loss_weights.outer_box);
    m["w_corner"] = fmt_double(g.loss_weights.corner);
    m["top_fraction"] = fmt_double(g.top_fraction);
    m["corner_band"] = std::to_string(g.corner_band);
    m["change_threshold"] = fmt_double(g.change_threshold);
    m["substitution"] = g.substitution ? "true" : "false";
    m["handoff"] = g.handoff == Handoff::SeedReuse ? "seed" : "continue";
    m["attention_resolutions"] = join(g.attention_resolutions, [](int r) { return std::to_string(r); });
    m["seed"] = std::to_string(seed);
    m["backbone"] = backbone;
    m["ldm_model"] = ldm_model;
    m["ldm_device"] = ldm_device;
    m["vlm"] = vlm;
    m["vlm_endpoint"] = vlm_endpoint;
    m["vlm_model"] = vlm_model;
    m["vlm_api_key_env"] = vlm_api_key_env;
    m["vlm_cache_dir"] = vlm_cache_dir;
    m["vlm_retries"] = std::to_string(vlm_retries);
    m["vlm_rate_limit_ms"] = std::to_string(vlm_rate_limit_ms);
    m["vlm_timeout_s"] = std::to_string(vlm_timeout_s);
    m["mock_pose_reply"] = mock_pose_reply;
    m["mock_layout_reply"] = mock_layout_reply;
    m["mock_replies_file"] = mock_replies_file;
    m["keypoints"] = keypoints;
    m["keypoint_fixture_dir"] = keypoint_fixture_dir;
    m["keypoint_margin"] = fmt_double(keypoint_margin);
    m["embedder"] = embedder;
    m["embedder_endpoint"] = embedder_endpoint;
    m["fixtures_dir"] = fixtures_dir;
    m["workers"] = std::to_string(workers);
    std::string overrides;
    for (const auto& [b, gnd] : gerund_overrides) overrides += (overrides.empty() ? "" : ",") + b + ":" + gnd;
    m["gerund_overrides"] = overrides;
    return m;
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& [k, v] : to_map()) out += k + " = " + v + "\n";
    return out;
}

std::filesystem::path RunConfig::resolved_fixtures_dir() const {
    return fixtures_dir.empty() ? std::filesystem::path(RECORD_DEFAULT_FIXTURES_DIR) : std::filesystem::path(fixtures_dir);
}

void RunConfig::validate() const {
    guidance.validate();
    if (backbone != "toy" && backbone != "ldm-adapter") throw InvalidConfig("backbone must be toy or ldm-adapter");
    if (vlm != "mock" && vlm != "remote") throw InvalidConfig("vlm must be mock or remote");
    if (keypoints != "template" && keypoints != "fixture") throw InvalidConfig("keypoints must be template or fixture");
    if (embedder != "none" && embedder != "remote") throw InvalidConfig("embedder must be none or remote");
    if (vlm_retries < 0) throw InvalidConfig("vlm_retries must be >= 0");
    if (vlm_rate_limit_ms < 0) throw InvalidConfig("vlm_rate_limit_ms must be >= 0");
    if (workers < 1) throw InvalidConfig("workers must be >= 1");
    if (!(keypoint_margin >= 0.0 && keypoint_margin < 0.5)) throw InvalidConfig("keypoint_margin must lie in [0, 0.5)");
}

RunConfig parse_config(std::string_view text, RunConfig base) {
    std::istringstream is{std::string(text)};
    int lineno = 0;
    for (std::string line; std::getline(is, line);) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw InvalidConfig("line " + std::to_string(lineno) + ": expected key = value");
        base.set(t.substr(0, eq), t.substr(eq + 1));
    }
    base.validate();
    return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
    std::ifstream is(path);
    if (!is) throw InvalidConfig("cannot read config file " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

}  // namespace record
