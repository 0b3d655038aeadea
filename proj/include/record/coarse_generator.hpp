#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "record/attention.hpp"
#include "record/backbone.hpp"
#include "record/config.hpp"
#include "record/image.hpp"
#include "record/prompt.hpp"

namespace record {

/// Token embeddings of the three streams. Both prompt streams share one
/// unconditional embedding.
struct StreamEmbeddings {
    TextEmbedding full;
    TextEmbedding intrans;
    TextEmbedding uncond;
};

StreamEmbeddings encode_streams(const Backbone& backbone, const PromptPair& pair);

/// Called once per denoising step with the full-stream maps actually used.
using StepObserver = std::function<void(int t, const AttentionMapSet& full_maps)>;

struct StepOptions {
    bool substitution = true;    // intransitive cross merge + gamma-gated self substitution
    bool inverse_mask = false;   // inverse-mask gating of every non-object token column
};

struct StepResult {
    LatentState next;           // z_{t-1}
    AttentionMapSet full_maps;  // full-stream maps after hooks
};

/// Runs the full and intransitive prompts on the same latent at every step.
/// The intransitive stream is observed only; its maps replace the aligned
/// token columns (and, past gamma, the self-attention) of the full stream.
class DualStreamDenoiser {
public:
    DualStreamDenoiser(const Backbone& backbone, const PromptPair& pair, const GuidanceConfig& config,
                       SamplerSchedule schedule);

    const SamplerSchedule& schedule() const noexcept { return schedule_; }
    const StreamEmbeddings& embeddings() const noexcept { return emb_; }
    const std::vector<std::string>& hook_layers() const noexcept { return hook_layers_; }
    Timestep timestep(int t) const { return {t, schedule_.alpha_bar(t)}; }

    /// Full-stream forward pass with the configured manipulations; returns
    /// the conditional noise estimate and the maps it used.
    NoiseOutput conditional(const LatentState& z, const StepOptions& opts) const;

    /// One complete step: conditional + unconditional, CFG, DDIM update.
    StepResult step(const LatentState& z, const StepOptions& opts) const;

    /// Runs z down to t = 0 with fixed options.
    LatentState run(LatentState z, const StepOptions& opts, const StepObserver& observer = {}) const;

private:
    const Backbone& backbone_;
    const PromptPair& pair_;
    GuidanceConfig config_;
    SamplerSchedule schedule_;
    StreamEmbeddings emb_;
    std::vector<std::string> hook_layers_;
};

struct CandidateImage {
    int index = 0;
    std::uint64_t seed = 0;
    Image preview;
    LatentState final_latent;         // t = 0 of the short schedule
    AttentionMapSet final_cross_maps;  // full-stream maps of the last step (t = 1)
    PromptPair prompt_pair;
};

/// M_g: k candidates with seeds base_seed + i, each denoised for T1 steps.
std::vector<CandidateImage> generate_candidates(const PromptPair& pair, const GuidanceConfig& config,
                                                const Backbone& backbone, std::uint64_t base_seed,
                                                const StepObserver& observer = {});

/// Initial latent for the T2 pass of a chosen candidate: the candidate's
/// seed (default) or its final latent re-noised to t = T2.
LatentState t2_initial_latent(const CandidateImage& chosen, const GuidanceConfig& config, const Backbone& backbone);

/// Chosen candidate re-rendered on the T2 schedule with attention substitution
/// and no correction. This is the bypass path of M_c.
struct RenderResult {
    Image image;
    LatentState final_latent;
    AttentionMapSet final_maps;
};
RenderResult rerender(const CandidateImage& chosen, const GuidanceConfig& config, const Backbone& backbone,
                      const StepObserver& observer = {});

/// Plain backbone sampling of the full prompt (no substitution), T2 steps.
RenderResult plain_generate(const PromptPair& pair, const GuidanceConfig& config, const Backbone& backbone,
                            std::uint64_t seed, const StepObserver& observer = {});

}  // namespace record
