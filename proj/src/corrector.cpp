#include "record/corrector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "record/error.hpp"
#include "record/simd/kernels.hpp"

namespace record {

namespace {

std::size_t top_count(double fraction, std::size_t n) {
    if (n == 0) return 0;
    const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    return std::clamp<std::size_t>(k, 1, n);
}

// Indices of the k largest values among `cells` (ties: lower index first).
std::vector<std::size_t> top_k(std::span<const double> a, std::vector<std::size_t> cells, std::size_t k) {
    std::stable_sort(cells.begin(), cells.end(), [&a](std::size_t i, std::size_t j) { return a[i] > a[j]; });
    cells.resize(k);
    return cells;
}

// Corner term along one axis. `profile_max(i)` returns (max value, argmax cell)
// of line i of the map; the box covers lines [lo, hi).
template <typename LineMax>
double corner_axis(int r, int lo, int hi, int band, LineMax&& line_max, std::vector<double>* grad, double weight) {
    std::vector<int> lines;
    for (int i = 0; i < r; ++i)
        if ((i >= lo - band && i < lo + band) || (i >= hi - band && i < hi + band)) lines.push_back(i);
    if (lines.empty()) return 0.0;
    double acc = 0.0;
    const double inv = 1.0 / static_cast<double>(lines.size());
    for (int i : lines) {
        const auto [v, cell] = line_max(i);
        const double target = (i >= lo && i < hi) ? 1.0 : 0.0;
        const double d = v - target;
        acc += std::abs(d);
        if (grad && d != 0.0) (*grad)[cell] += weight * inv * (d > 0 ? 1.0 : -1.0);
    }
    return acc * inv;
}

BoxLossReport losses_impl(std::span<const double> a, int r, const BoundingBox& box, const BoxLossOptions& o,
                          std::vector<double>* grad) {
    if (r < 1 || a.size() != static_cast<std::size_t>(r) * r) throw ShapeMismatch("object map is not r x r");
    if (!(o.top_fraction > 0.0 && o.top_fraction <= 1.0)) throw ValueOutOfRange("top_fraction must lie in (0, 1]");
    for (double v : a)
        if (!(v >= 0.0 && v <= 1.0)) throw ValueOutOfRange("box losses need a map normalized to [0, 1]");
    const CellRange c = rasterize(box, r);
    if (grad) grad->assign(a.size(), 0.0);

    std::vector<std::size_t> inside, outside;
    for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x) (c.contains(x, y) ? inside : outside).push_back(static_cast<std::size_t>(y) * r + x);

    BoxLossReport rep;
    const auto& w = o.weights;
    {
        const auto sel = top_k(a, inside, top_count(o.top_fraction, inside.size()));
        double s = 0.0;
        for (auto i : sel) s += a[i];
        rep.L_IB = 1.0 - s / static_cast<double>(sel.size());
        if (grad)
            for (auto i : sel) (*grad)[i] -= w.inner_box / static_cast<double>(sel.size());
    }
    if (!outside.empty()) {
        const auto sel = top_k(a, outside, top_count(o.top_fraction, outside.size()));
        double s = 0.0;
        for (auto i : sel) s += a[i];
        rep.L_OB = s / static_cast<double>(sel.size());
        if (grad)
            for (auto i : sel) (*grad)[i] += w.outer_box / static_cast<double>(sel.size());
    }
    const auto col_max = [&](int x) {
        std::size_t best = static_cast<std::size_t>(x);
        for (int y = 1; y < r; ++y) {
            const std::size_t i = static_cast<std::size_t>(y) * r + x;
            if (a[i] > a[best]) best = i;
        }
        return std::pair{a[best], best};
    };
    const auto row_max = [&](int y) {
        std::size_t best = static_cast<std::size_t>(y) * r;
        for (int x = 1; x < r; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * r + x;
            if (a[i] > a[best]) best = i;
        }
        return std::pair{a[best], best};
    };
    const double half = 0.5 * w.corner;
    const double cx = corner_axis(r, c.x0, c.x1, o.corner_band, col_max, grad, half);
    const double cy = corner_axis(r, c.y0, c.y1, o.corner_band, row_max, grad, half);
    rep.L_CC = 0.5 * (cx + cy);
    rep.total = w.inner_box * rep.L_IB + w.outer_box * rep.L_OB + w.corner * rep.L_CC;
    return rep;
}

double l2(std::span<const double> v) { return std::sqrt(simd::dot(v, v)); }

}  // namespace

BoxLossReport box_losses(std::span<const double> object_map, int resolution, const BoundingBox& box,
                         const BoxLossOptions& options) {
    return losses_impl(object_map, resolution, box, options, nullptr);
}

BoxLossReport box_losses_grad(std::span<const double> object_map, int resolution, const BoundingBox& box,
                              const BoxLossOptions& options, std::vector<double>& grad) {
    return losses_impl(object_map, resolution, box, options, &grad);
}

LatentState update_latent(const LatentState& state, std::span<const double> grad, double alpha) {
    if (grad.size() != state.z.size()) throw ShapeMismatch("gradient does not match the latent");
    if (!all_finite(grad)) throw NonFiniteGradient("box-loss gradient has non-finite entries");
    if (!std::isfinite(alpha)) throw NonFiniteGradient("non-finite step size");
    LatentState out = state;
    if (alpha == 0.0) return out;
    simd::axpy(-alpha, grad, out.z);
    return out;
}

BoxObjective::BoxObjective(const Backbone& backbone, const DualStreamDenoiser& denoiser, std::size_t object_index,
                           BoundingBox target, BoxLossOptions options)
    : backbone_(backbone), denoiser_(denoiser), object_index_(object_index), target_(target), options_(options) {
    target_.validate();
    const auto all = backbone.cross_layers();
    int coarsest = 0;
    for (const auto& l : all)
        if (std::find(denoiser.hook_layers().begin(), denoiser.hook_layers().end(), l.id) != denoiser.hook_layers().end())
            if (coarsest == 0 || l.resolution < coarsest) coarsest = l.resolution;
    for (const auto& l : all)
        if (l.resolution == coarsest &&
            std::find(denoiser.hook_layers().begin(), denoiser.hook_layers().end(), l.id) != denoiser.hook_layers().end())
            layers_.push_back(l.id);
    if (layers_.empty()) throw InvalidConfig("no layer available for the box loss");
    resolution_ = coarsest;
    rasterize(target_, resolution_);  // BoxTooSmall early
}

std::vector<double> BoxObjective::object_map(const LatentState& z) const {
    const auto out = backbone_.predict_noise(z, denoiser_.timestep(z.t), denoiser_.embeddings().full, nullptr);
    return aggregate_token_map(out.maps, object_index_, layers_);
}

BoxLossReport BoxObjective::evaluate(const LatentState& z) const {
    const auto a = object_map(z);
    return box_losses(normalize_by_max(a), resolution_, target_, options_);
}

BoxLossReport BoxObjective::evaluate(const LatentState& z, std::vector<double>& grad_z) const {
    const auto a = object_map(z);
    const auto n = normalize_by_max(a);
    std::vector<double> g_n;
    BoxLossReport rep = box_losses_grad(n, resolution_, target_, options_, g_n);

    grad_z.assign(z.z.size(), 0.0);
    const auto peak_it = std::max_element(a.begin(), a.end());
    const double peak = *peak_it;
    if (!(peak > 0.0)) return rep;
    // n = a / max(a): dn_p/da_q = delta_pq / M - a_p / M^2 [q = argmax].
    std::vector<double> g_a(a.size());
    for (std::size_t q = 0; q < a.size(); ++q) g_a[q] = g_n[q] / peak;
    g_a[static_cast<std::size_t>(peak_it - a.begin())] -= simd::dot(g_n, a) / (peak * peak);
    simd::scale(1.0 / static_cast<double>(layers_.size()), g_a);

    const Timestep ts = denoiser_.timestep(z.t);
    for (const auto& id : layers_) {
        const auto g = backbone_.cross_attention_vjp(z, ts, denoiser_.embeddings().full, id, object_index_, g_a);
        simd::axpy(1.0, g, grad_z);
    }
    rep.grad_norm = l2(grad_z);
    return rep;
}

CorrectionResult corrected_generate(const CandidateImage& chosen, const LayoutSuggestion& suggestion,
                                    const GuidanceConfig& config, const Backbone& backbone,
                                    const StepObserver& observer) {
    if (!suggestion.needs_correction())
        throw PreconditionViolation("correction requested for a layout the change gate accepted");
    return corrected_generate(chosen, suggestion.proposed_box(), config, backbone, observer);
}

CorrectionResult corrected_generate(const CandidateImage& chosen, const BoundingBox& target,
                                    const GuidanceConfig& config, const Backbone& backbone,
                                    const StepObserver& observer) {
    config.validate();
    const PromptPair& pair = chosen.prompt_pair;
    if (!pair.object_index) throw PreconditionViolation("correction needs an object token");
    const DualStreamDenoiser denoiser(backbone, pair, config, backbone.schedule(config.T2));
    const BoxObjective objective(backbone, denoiser, *pair.object_index, target,
                                 {config.top_fraction, config.loss_weights, config.corner_band});
    const auto alphas = config.alpha_schedule();
    const int window = config.active_steps();

    CorrectionResult out;
    LatentState z = t2_initial_latent(chosen, config, backbone);
    double prev_total = 0.0;
    bool have_prev = false;
    int growth = 0;
    std::vector<double> grad;
    while (z.t > 0) {
        const int i = config.T2 - z.t;
        const double alpha = alphas[static_cast<std::size_t>(i)];
        const bool active = i < window && alpha > 0.0;
        BoxLossReport rep;
        StepResult r;
        if (active) {
            rep = objective.evaluate(z, grad);
            const LatentState zhat = update_latent(z, grad, alpha);
            if (have_prev && rep.total > prev_total) {
                if (++growth >= 10)
                    throw DivergenceDetected("box loss grew for 10 consecutive active steps (t = " + std::to_string(z.t) + ")");
            } else {
                growth = 0;
            }
            prev_total = rep.total;
            have_prev = true;
            r = denoiser.step(zhat, {config.substitution, true});
        } else {
            rep = objective.evaluate(z);
            r = denoiser.step(z, {config.substitution, false});
        }
        rep.step = z.t;
        out.trace.push_back(rep);
        out.active.push_back(active);
        if (observer) observer(z.t, r.full_maps);
        if (z.t == 1) out.final_maps = r.full_maps;
        z = std::move(r.next);
    }
    out.image = backbone.decode(z);
    out.final_latent = std::move(z);
    return out;
}

std::string loss_trace_csv(const std::vector<BoxLossReport>& trace) {
    std::string out = "step,L_IB,L_OB,L_CC,total,grad_norm\n";
    char buf[160];
    for (const auto& r : trace) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step, r.L_IB, r.L_OB, r.L_CC, r.total,
                      r.grad_norm);
        out += buf;
    }
    return out;
}

void write_loss_trace(const std::filesystem::path& path, const std::vector<BoxLossReport>& trace) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << loss_trace_csv(trace);
}

double mass_inside(std::span<const double> map, int resolution, const BoundingBox& box) {
    const auto ind = box_indicator(box, resolution);
    if (ind.size() != map.size()) throw ShapeMismatch("map does not match resolution");
    const double total = std::accumulate(map.begin(), map.end(), 0.0);
    if (!(total > 0.0)) return 0.0;
    double in = 0.0;
    for (std::size_t i = 0; i < map.size(); ++i) in += map[i] * ind[i];
    return in / total;
}

}  // namespace record
