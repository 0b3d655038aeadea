#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace record {

struct LossWeights {
    double inner_box = 1.0;
    double outer_box = 1.0;
    double corner = 1.0;
};

enum class Handoff { SeedReuse, LatentContinuation };

/// Knobs of the three-stage pipeline.
struct GuidanceConfig {
    int T1 = 10;             // coarse candidate steps
    int T2 = 50;             // correction steps
    int k = 5;               // candidate count
    int gamma = 5;           // self-attention substitution starts once t > gamma
    double cfg_scale = 7.5;  // classifier-free guidance s

    double alpha_max = 20.0;             // latent step size at the first active step
    std::vector<double> alpha_override;  // explicit per-step alphas (length T2) when non-empty
    double loss_active_fraction = 0.6;   // leading share of the T2 steps that update z
    LossWeights loss_weights;
    double top_fraction = 0.2;
    int corner_band = 2;
    double change_threshold = 0.8;  // IoU below this requests a correction

    bool substitution = true;
    Handoff handoff = Handoff::SeedReuse;
    std::vector<int> attention_resolutions;  // empty: two coarsest backbone resolutions

    /// Number of leading T2 steps inside the loss-active window.
    int active_steps() const;

    /// alpha per T2 step, index 0 = first step (t = T2). Linear decay from
    /// alpha_max towards 0 across the window, zero afterwards.
    std::vector<double> alpha_schedule() const;

    void validate() const;  // throws InvalidConfig
};

/// Everything a run needs besides the prompt. Loaded from a flat key=value
/// file; see docs/config.md for the keys.
struct RunConfig {
    GuidanceConfig guidance;
    std::uint64_t seed = 0;

    std::string backbone = "toy";  // toy | ldm-adapter
    std::string ldm_model;
    std::string ldm_device = "cpu";

    std::string vlm = "mock";  // mock | remote
    std::string vlm_endpoint;
    std::string vlm_model = "gpt-4-vision-preview";
    std::string vlm_api_key_env = "RECORD_VLM_API_KEY";
    std::string vlm_cache_dir = "cache/vlm";
    int vlm_retries = 2;
    int vlm_rate_limit_ms = 0;
    int vlm_timeout_s = 60;
    std::string mock_pose_reply = "Image 1";
    std::string mock_layout_reply;  // empty: echo the extracted box (no change)
    std::string mock_replies_file;  // optional "hash<TAB>reply" table

    std::string keypoints = "template";  // template | fixture
    std::string keypoint_fixture_dir;
    double keypoint_margin = 0.02;

    std::string embedder = "none";  // none | remote
    std::string embedder_endpoint;

    std::string fixtures_dir;  // few-shot + instruction fixtures; empty: built-in path
    int workers = 1;
    std::map<std::string, std::string> gerund_overrides;

    /// Applies one key=value pair; throws InvalidConfig for unknown keys or bad values.
    void set(std::string_view key, std::string_view value);

    /// Canonical, sorted key=value text; parse(to_text()) reproduces the config.
    std::string to_text() const;
    std::map<std::string, std::string> to_map() const;

    std::filesystem::path resolved_fixtures_dir() const;
    void validate() const;
};

RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace record
