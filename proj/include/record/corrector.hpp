#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "record/agents.hpp"
#include "record/boxes.hpp"
#include "record/coarse_generator.hpp"
#include "record/config.hpp"

namespace record {

struct BoxLossReport {
    double L_IB = 0.0;
    double L_OB = 0.0;
    double L_CC = 0.0;
    double total = 0.0;
    int step = 0;
    double grad_norm = 0.0;
};

struct BoxLossOptions {
    double top_fraction = 0.2;
    LossWeights weights;
    int corner_band = 2;
};

/// Box constraints on an object map normalized to [0, 1]:
///   L_IB = 1 - mean(top ceil(f |B|) values inside the box)
///   L_OB = mean(top ceil(f |~B|) values outside the box)   (0 without outside cells)
///   L_CC = mean over x and y of mean |colmax/rowmax(A) - box profile| over
///          the cells within `corner_band` of either box edge
BoxLossReport box_losses(std::span<const double> object_map, int resolution, const BoundingBox& box,
                         const BoxLossOptions& options = {});

/// Same, plus a subgradient of `total` w.r.t. each map cell (ties in the
/// top-k and max selections resolve to the lowest index).
BoxLossReport box_losses_grad(std::span<const double> object_map, int resolution, const BoundingBox& box,
                              const BoxLossOptions& options, std::vector<double>& grad);

/// ẑ = z - alpha * grad; the step index is unchanged.
LatentState update_latent(const LatentState& state, std::span<const double> grad, double alpha);

/// Box loss of the object token as a function of the latent: the object's
/// full-stream cross map (mean over the coarsest hooked layers), normalized
/// by its max. Gradients go through the backbone's attention VJP.
class BoxObjective {
public:
    BoxObjective(const Backbone& backbone, const DualStreamDenoiser& denoiser, std::size_t object_index,
                 BoundingBox target, BoxLossOptions options);

    const std::vector<std::string>& loss_layers() const noexcept { return layers_; }
    int resolution() const noexcept { return resolution_; }

    std::vector<double> object_map(const LatentState& z) const;  // aggregated, not normalized
    BoxLossReport evaluate(const LatentState& z) const;
    BoxLossReport evaluate(const LatentState& z, std::vector<double>& grad_z) const;

private:
    const Backbone& backbone_;
    const DualStreamDenoiser& denoiser_;
    std::size_t object_index_;
    BoundingBox target_;
    BoxLossOptions options_;
    std::vector<std::string> layers_;
    int resolution_ = 0;
};

struct CorrectionResult {
    Image image;
    LatentState final_latent;
    AttentionMapSet final_maps;
    std::vector<BoxLossReport> trace;  // one per T2 step, first step first
    std::vector<bool> active;          // whether the step updated z and masked attention
};

/// M_c: T2-step re-render of the chosen candidate with substitution, inverse mask and the
/// box-constrained latent update. Requires suggestion.needs_correction().
CorrectionResult corrected_generate(const CandidateImage& chosen, const LayoutSuggestion& suggestion,
                                    const GuidanceConfig& config, const Backbone& backbone,
                                    const StepObserver& observer = {});

/// Same run against an explicit target box (used by tests and experiments).
CorrectionResult corrected_generate(const CandidateImage& chosen, const BoundingBox& target,
                                    const GuidanceConfig& config, const Backbone& backbone,
                                    const StepObserver& observer = {});

std::string loss_trace_csv(const std::vector<BoxLossReport>& trace);
void write_loss_trace(const std::filesystem::path& path, const std::vector<BoxLossReport>& trace);

/// Share of a map's mass that falls inside a box at the map's resolution.
double mass_inside(std::span<const double> map, int resolution, const BoundingBox& box);

}  // namespace record
