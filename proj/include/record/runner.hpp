#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "record/agents.hpp"
#include "record/boxes.hpp"
#include "record/config.hpp"
#include "record/eval.hpp"
#include "record/keypoints.hpp"
#include "record/vlm.hpp"

namespace record {

/// Which stages run. `none` is plain sampling of the full prompt; the other
/// three are the M_g / M_g+M_r / M_g+M_r+M_c ablation shapes.
enum class ModuleSet { None, G, GR, GRC };

ModuleSet parse_modules(std::string_view text);  // "none", "g", "g,r", "g,r,c"; throws InvalidConfig
std::string to_string(ModuleSet m);

struct RunManifest {
    std::string run_id;
    std::string config_text;  // RunConfig::to_text()
    std::string prompt_source;
    ModuleSet modules = ModuleSet::GRC;
    std::vector<std::uint64_t> seeds;
    std::string created_at;
    std::string finished_at;
    std::map<std::string, std::string> artifacts;        // name -> path relative to the run dir
    std::map<std::string, std::string> artifact_sha256;  // name -> content hash

    // Stage outcomes.
    std::optional<std::size_t> selected_index;
    std::optional<BoundingBox> extracted_box;
    std::optional<BoundingBox> proposed_box;
    std::optional<BoundingBox> human_box;
    bool correction_applied = false;

    /// SHA-256 of the manifest without its timestamps.
    std::string manifest_hash() const;
    std::string to_json() const;
    static RunManifest from_json(std::string_view text);
};

/// Shared per-process services. The VLM client and its rate limiter are
/// shared across batch workers; backbones are created per run.
struct RunServices {
    std::shared_ptr<VlmClient> vlm;
    std::shared_ptr<KeypointDetector> keypoints;
    std::shared_ptr<Embedder> embedder;  // may be null
    AgentFixtures fixtures;

    static RunServices from_config(const RunConfig& config);
};

/// Content hash of the inputs that determine a run.
std::string compute_run_id(const RunConfig& config, std::string_view prompt, ModuleSet modules);

struct RunRequest {
    std::string prompt;
    RunConfig config;
    ModuleSet modules = ModuleSet::GRC;
    std::filesystem::path out_root = "runs";
};

RunRequest request_from_manifest(const RunManifest& manifest, std::filesystem::path out_root);
RunManifest load_manifest(const std::filesystem::path& run_dir);

/// Runs the enabled stages in order and persists every artifact under
/// `<out_root>/<run_id>/`. Module errors are rethrown as StageError.
RunManifest run_generate(const RunRequest& request, RunServices& services);

struct BatchLedgerEntry {
    std::size_t line = 0;
    std::string prompt;
    std::string kind;
    std::string message;
};

struct BatchResult {
    std::vector<RunManifest> manifests;  // in prompt-file order, failures omitted
    std::vector<BatchLedgerEntry> errors;
    std::optional<BatchSummary> summary;  // when an embedder is configured
};

/// One independent run per prompt line on up to config.workers threads.
/// Writes `<out_root>/batch_errors.tsv` and, with an embedder,
/// `<out_root>/batch_summary.tsv`.
BatchResult run_batch(const std::filesystem::path& prompt_file, const RunConfig& config, ModuleSet modules,
                      const std::filesystem::path& out_root, RunServices& services);

struct InspectResult {
    std::vector<std::filesystem::path> files;
    std::string warning;  // non-empty when nothing could be dumped
};

/// Replays a stored run and dumps the maps of `step` (of the run's last
/// denoising pass) to `<dump_root>/<run_id>/<step>/<layer>/<token>.{arr,png}`.
/// An empty `layer` dumps every hooked layer.
InspectResult inspect_attention(const std::filesystem::path& out_root, const std::string& run_id, int step,
                                const std::string& layer, const std::filesystem::path& dump_root);

/// Scores the final image of each run and writes its scores.tsv.
std::vector<ScoreRecord> evaluate_runs(const std::filesystem::path& out_root, const std::vector<std::string>& run_ids,
                                       Embedder* embedder);

}  // namespace record
