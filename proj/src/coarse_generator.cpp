#include "record/coarse_generator.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace record {

namespace {

bool contains(const std::vector<std::string>& ids, const std::string& id) {
    return std::find(ids.begin(), ids.end(), id) != ids.end();
}

}  // namespace

StreamEmbeddings encode_streams(const Backbone& backbone, const PromptPair& pair) {
    return {backbone.encode(pair.full_tokens, Stream::Full), backbone.encode(pair.intrans_tokens, Stream::Intransitive),
            backbone.encode_unconditional()};
}

DualStreamDenoiser::DualStreamDenoiser(const Backbone& backbone, const PromptPair& pair, const GuidanceConfig& config,
                                       SamplerSchedule schedule)
    : backbone_(backbone),
      pair_(pair),
      config_(config),
      schedule_(std::move(schedule)),
      emb_(encode_streams(backbone, pair)),
      hook_layers_(select_layers(backbone.cross_layers(), config.attention_resolutions)) {
    schedule_.validate();
    if (hook_layers_.empty()) throw InvalidConfig("no cross-attention layer matches the configured resolutions");
}

NoiseOutput DualStreamDenoiser::conditional(const LatentState& z, const StepOptions& opts) const {
    const Timestep ts = timestep(z.t);
    const bool use_mask = opts.inverse_mask && pair_.object_index.has_value();
    if (!opts.substitution && !use_mask) return backbone_.predict_noise(z, ts, emb_.full, nullptr);

    AttentionMapSet intrans;
    if (opts.substitution) intrans = backbone_.predict_noise(z, ts, emb_.intrans, nullptr).maps;

    const auto self_ids = select_layers(backbone_.self_layers(), config_.attention_resolutions);
    AttentionHooks hooks;
    hooks.on_cross = [&](const Timestep&, CrossAttentionLayer& layer) {
        if (!contains(hook_layers_, layer.layer.id)) return;
        if (opts.substitution) merge_cross_layer(layer, intrans.layer(layer.layer.id), pair_.alignment);
        if (use_mask) {
            const std::size_t m = *pair_.object_index;
            const auto mask = inverse_mask(normalize_by_max(layer.maps.column(m)));
            apply_inverse_mask(mask, layer, m);
        }
    };
    if (opts.substitution && self_substitution_active(z.t, config_.gamma)) {
        hooks.on_self = [&](const Timestep&, const LayerInfo& info, Matrix& self_maps) {
            if (!contains(self_ids, info.id)) return;
            auto it = intrans.self_.find(info.id);
            if (it == intrans.self_.end()) throw BackboneFailure("intransitive stream lacks self layer '" + info.id + "'");
            self_maps = merge_self_attention(self_maps, it->second, z.t, config_.gamma);
        };
    }
    return backbone_.predict_noise(z, ts, emb_.full, &hooks);
}

StepResult DualStreamDenoiser::step(const LatentState& z, const StepOptions& opts) const {
    NoiseOutput cond = conditional(z, opts);
    std::vector<double> eps;
    if (config_.cfg_scale == 1.0) {
        eps = std::move(cond.noise);
    } else {
        const auto uncond = backbone_.predict_noise(z, timestep(z.t), emb_.uncond, nullptr);
        eps = guided_noise(cond.noise, uncond.noise, config_.cfg_scale);
    }
    return {sampler_step(z, eps, schedule_), std::move(cond.maps)};
}

LatentState DualStreamDenoiser::run(LatentState z, const StepOptions& opts, const StepObserver& observer) const {
    while (z.t > 0) {
        auto r = step(z, opts);
        if (observer) observer(z.t, r.full_maps);
        z = std::move(r.next);
    }
    return z;
}

std::vector<CandidateImage> generate_candidates(const PromptPair& pair, const GuidanceConfig& config,
                                                const Backbone& backbone, std::uint64_t base_seed,
                                                const StepObserver& observer) {
    if (config.k < 1) throw CandidateCountZero("k must be at least 1");
    config.validate();
    const DualStreamDenoiser denoiser(backbone, pair, config, backbone.schedule(config.T1));
    const StepOptions opts{config.substitution, false};

    std::vector<CandidateImage> out;
    out.reserve(static_cast<std::size_t>(config.k));
    for (int i = 0; i < config.k; ++i) {
        CandidateImage c;
        c.index = i;
        c.seed = base_seed + static_cast<std::uint64_t>(i);
        c.prompt_pair = pair;
        LatentState z = initial_latent(backbone.latent_shape(), c.seed, config.T1);
        while (z.t > 0) {
            auto r = denoiser.step(z, opts);
            if (observer) observer(z.t, r.full_maps);
            if (z.t == 1) c.final_cross_maps = std::move(r.full_maps);
            z = std::move(r.next);
        }
        c.preview = backbone.decode(z);
        c.final_latent = std::move(z);
        out.push_back(std::move(c));
    }
    return out;
}

LatentState t2_initial_latent(const CandidateImage& chosen, const GuidanceConfig& config, const Backbone& backbone) {
    if (config.handoff == Handoff::SeedReuse) return initial_latent(backbone.latent_shape(), chosen.seed, config.T2);
    const double ab = backbone.schedule(config.T2).alpha_bar(config.T2);
    LatentState z = initial_latent(backbone.latent_shape(), chosen.seed, config.T2);
    if (chosen.final_latent.z.size() != z.z.size()) throw ShapeMismatch("candidate latent does not match backbone");
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    for (std::size_t i = 0; i < z.z.size(); ++i) z.z[i] = a * chosen.final_latent.z[i] + b * z.z[i];
    return z;
}

namespace {

RenderResult render(const DualStreamDenoiser& denoiser, const Backbone& backbone, LatentState z,
                    const StepOptions& opts, const StepObserver& observer) {
    RenderResult out;
    while (z.t > 0) {
        auto r = denoiser.step(z, opts);
        if (observer) observer(z.t, r.full_maps);
        if (z.t == 1) out.final_maps = std::move(r.full_maps);
        z = std::move(r.next);
    }
    out.image = backbone.decode(z);
    out.final_latent = std::move(z);
    return out;
}

}  // namespace

RenderResult rerender(const CandidateImage& chosen, const GuidanceConfig& config, const Backbone& backbone,
                      const StepObserver& observer) {
    config.validate();
    const DualStreamDenoiser denoiser(backbone, chosen.prompt_pair, config, backbone.schedule(config.T2));
    return render(denoiser, backbone, t2_initial_latent(chosen, config, backbone), {config.substitution, false},
                  observer);
}

RenderResult plain_generate(const PromptPair& pair, const GuidanceConfig& config, const Backbone& backbone,
                            std::uint64_t seed, const StepObserver& observer) {
    config.validate();
    const DualStreamDenoiser denoiser(backbone, pair, config, backbone.schedule(config.T2));
    return render(denoiser, backbone, initial_latent(backbone.latent_shape(), seed, config.T2), {false, false},
                  observer);
}

}  // namespace record
