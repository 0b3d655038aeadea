#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "record/attention.hpp"
#include "record/image.hpp"
#include "record/tensor.hpp"

namespace record {

struct LatentShape {
    int channels = 0;
    int height = 0;
    int width = 0;

    std::size_t positions() const noexcept { return static_cast<std::size_t>(height) * width; }
    std::size_t size() const noexcept { return positions() * channels; }
    friend bool operator==(const LatentShape&, const LatentShape&) = default;
};

/// z_t. Storage is channel-major: z[c * positions + p].
struct LatentState {
    LatentShape shape;
    std::vector<double> z;
    int t = 0;
    std::uint64_t seed = 0;
    Stream stream_tag = Stream::Full;

    double& at(int c, std::size_t p) { return z[static_cast<std::size_t>(c) * shape.positions() + p]; }
    double at(int c, std::size_t p) const { return z[static_cast<std::size_t>(c) * shape.positions() + p]; }
};

/// Standard-normal samples from a seed (Box-Muller over mt19937_64, so the
/// stream is identical on every platform).
std::vector<double> gaussian_noise(std::uint64_t seed, std::size_t count);

LatentState initial_latent(const LatentShape& shape, std::uint64_t seed, int t);

/// Deterministic DDIM schedule. alphas_bar[i] belongs to step t = i + 1 and
/// decreases with t; the clean end t = 0 uses alpha_bar = 1.
struct SamplerSchedule {
    int num_steps = 0;
    std::vector<double> alphas_bar;
    double eta = 0.0;

    /// `steps` values linearly spaced from `first` (t = 1) to `last` (t = steps).
    static SamplerSchedule linear(int steps, double first = 0.99, double last = 0.05);

    double alpha_bar(int t) const;
    void validate() const;
};

/// uncond + s * (cond - uncond). s == 1 returns cond exactly.
std::vector<double> guided_noise(std::span<const double> cond, std::span<const double> uncond, double s);

/// One eta = 0 DDIM update from t to t - 1.
LatentState sampler_step(const LatentState& state, std::span<const double> noise_est, const SamplerSchedule& schedule);

struct Timestep {
    int t = 0;
    double alpha_bar = 1.0;
};

struct TextEmbedding {
    std::vector<std::string> tokens;
    Matrix vectors;  // tokens x width
    Stream stream = Stream::Full;
};

/// Hooks run synchronously inside predict_noise, after a layer's attention
/// has been computed and before it weights the values. A hook may edit the
/// maps in place but must keep their shape.
struct AttentionHooks {
    std::function<void(const Timestep&, CrossAttentionLayer&)> on_cross;
    std::function<void(const Timestep&, const LayerInfo&, Matrix&)> on_self;
};

struct NoiseOutput {
    std::vector<double> noise;  // same layout as LatentState::z
    AttentionMapSet maps;       // as used in the forward pass (after hooks)
};

/// Denoising backbone contract.
class Backbone {
public:
    virtual ~Backbone() = default;

    virtual std::string name() const = 0;
    virtual LatentShape latent_shape() const = 0;
    virtual std::vector<LayerInfo> cross_layers() const = 0;
    virtual std::vector<LayerInfo> self_layers() const = 0;

    virtual std::vector<std::string> tokenize(std::string_view text) const = 0;
    virtual TextEmbedding encode(const std::vector<std::string>& tokens, Stream stream) const = 0;
    virtual TextEmbedding encode_unconditional() const = 0;

    virtual SamplerSchedule schedule(int num_steps) const = 0;

    virtual NoiseOutput predict_noise(const LatentState& state, const Timestep& ts, const TextEmbedding& text,
                                      const AttentionHooks* hooks) const = 0;

    /// d/dz of sum_p upstream[p] * A[p][token] for one cross layer, evaluated
    /// without hooks. Used by the box-constrained latent update.
    virtual std::vector<double> cross_attention_vjp(const LatentState& state, const Timestep& ts,
                                                    const TextEmbedding& text, const std::string& layer_id,
                                                    std::size_t token, std::span<const double> upstream) const = 0;

    virtual Image decode(const LatentState& state) const = 0;
};

/// Checks a hook left the shape alone; throws HookShapeMismatch.
void check_hook_shape(const Matrix& before_shape, const Matrix& after, const std::string& what);

/// The two coarsest distinct resolutions among `layers`; all ids at those
/// resolutions are returned.
std::vector<std::string> default_hook_layers(const std::vector<LayerInfo>& layers);

/// Layer ids whose resolution is listed; empty list selects the default.
std::vector<std::string> select_layers(const std::vector<LayerInfo>& layers, const std::vector<int>& resolutions);

}  // namespace record
