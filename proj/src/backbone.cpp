#include "record/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "record/simd/kernels.hpp"

namespace record {

std::vector<double> gaussian_noise(std::uint64_t seed, std::size_t count) {
    std::mt19937_64 rng(seed);
    auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; i += 2) {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        out[i] = r * std::cos(2.0 * std::numbers::pi * u2);
        if (i + 1 < count) out[i + 1] = r * std::sin(2.0 * std::numbers::pi * u2);
    }
    return out;
}

LatentState initial_latent(const LatentShape& shape, std::uint64_t seed, int t) {
    LatentState s;
    s.shape = shape;
    s.z = gaussian_noise(seed, shape.size());
    s.t = t;
    s.seed = seed;
    return s;
}

SamplerSchedule SamplerSchedule::linear(int steps, double first, double last) {
    if (steps < 1) throw InvalidConfig("schedule needs at least one step");
    SamplerSchedule s;
    s.num_steps = steps;
    s.alphas_bar.resize(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i)
        s.alphas_bar[static_cast<std::size_t>(i)] =
            steps == 1 ? first : first + (last - first) * static_cast<double>(i) / (steps - 1);
    s.validate();
    return s;
}

double SamplerSchedule::alpha_bar(int t) const {
    if (t == 0) return 1.0;
    if (t < 0 || t > num_steps) throw ScheduleExhausted("step " + std::to_string(t) + " outside schedule");
    return alphas_bar[static_cast<std::size_t>(t - 1)];
}

void SamplerSchedule::validate() const {
    if (num_steps < 1 || alphas_bar.size() != static_cast<std::size_t>(num_steps))
        throw InvalidConfig("schedule length mismatch");
    if (!(alphas_bar.front() <= 1.0)) throw InvalidConfig("first alpha_bar must be <= 1");
    for (std::size_t i = 0; i < alphas_bar.size(); ++i) {
        if (!(alphas_bar[i] > 0.0)) throw InvalidConfig("alpha_bar must be positive");
        if (i > 0 && !(alphas_bar[i] < alphas_bar[i - 1])) throw InvalidConfig("alpha_bar must strictly decrease");
    }
}

std::vector<double> guided_noise(std::span<const double> cond, std::span<const double> uncond, double s) {
    if (cond.size() != uncond.size()) throw ShapeMismatch("guided_noise: cond/uncond sizes differ");
    if (s == 1.0) return {cond.begin(), cond.end()};
    std::vector<double> out(cond.size());
    simd::guidance(uncond, cond, s, out);
    return out;
}

LatentState sampler_step(const LatentState& state, std::span<const double> eps, const SamplerSchedule& schedule) {
    if (state.t < 1) throw ScheduleExhausted("cannot step below t = 0");
    if (eps.size() != state.z.size()) throw ShapeMismatch("noise estimate does not match latent");
    const double ab_t = schedule.alpha_bar(state.t);
    const double ab_prev = schedule.alpha_bar(state.t - 1);
    // z' = sqrt(ab') * x0 + sqrt(1 - ab') * eps with x0 = (z - sqrt(1 - ab) * eps) / sqrt(ab),
    // folded into z' = cz * z + ce * eps.
    const double cz = std::sqrt(ab_prev / ab_t);
    const double ce = std::sqrt(1.0 - ab_prev) - cz * std::sqrt(1.0 - ab_t);
    LatentState next = state;
    next.t = state.t - 1;
    for (std::size_t i = 0; i < state.z.size(); ++i) next.z[i] = cz * state.z[i] + ce * eps[i];
    return next;
}

void check_hook_shape(const Matrix& before, const Matrix& after, const std::string& what) {
    if (!before.same_shape(after)) throw HookShapeMismatch("hook changed the shape of " + what);
}

std::vector<std::string> default_hook_layers(const std::vector<LayerInfo>& layers) {
    std::set<int> resolutions;
    for (const auto& l : layers) resolutions.insert(l.resolution);
    std::vector<int> coarsest(resolutions.begin(), resolutions.end());
    if (coarsest.size() > 2) coarsest.resize(2);
    return select_layers(layers, coarsest);
}

std::vector<std::string> select_layers(const std::vector<LayerInfo>& layers, const std::vector<int>& resolutions) {
    if (resolutions.empty()) return default_hook_layers(layers);
    std::vector<std::string> out;
    for (const auto& l : layers)
        if (std::find(resolutions.begin(), resolutions.end(), l.resolution) != resolutions.end()) out.push_back(l.id);
    return out;
}

}  // namespace record
