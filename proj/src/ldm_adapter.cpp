#include "record/ldm_adapter.hpp"

#include <mutex>

#include "record/toy_backbone.hpp"

namespace record {

namespace {

std::mutex g_mu;
LdmRuntimeFactory g_factory;

template <typename F>
auto guarded(const char* what, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw BackboneFailure(std::string(what) + ": " + e.what());
    }
}

}  // namespace

void register_ldm_runtime(LdmRuntimeFactory factory) {
    std::lock_guard lock(g_mu);
    g_factory = std::move(factory);
}

bool ldm_runtime_registered() {
    std::lock_guard lock(g_mu);
    return static_cast<bool>(g_factory);
}

LdmAdapter::LdmAdapter(LdmOptions options) : options_(std::move(options)) {
    LdmRuntimeFactory factory;
    {
        std::lock_guard lock(g_mu);
        factory = g_factory;
    }
    if (!factory) throw BackboneFailure("no latent-diffusion runtime registered for model '" + options_.model + "'");
    inner_ = guarded("runtime construction", [&] { return factory(options_); });
    if (!inner_) throw BackboneFailure("runtime factory returned no backbone");
    const auto shape = inner_->latent_shape();
    if (shape.channels < 1 || shape.height < 1 || shape.width < 1) throw BackboneFailure("runtime reports an empty latent");
    if (inner_->cross_layers().empty()) throw BackboneFailure("runtime exposes no cross-attention layer");
}

std::string LdmAdapter::name() const { return "ldm-adapter(" + inner_->name() + ")"; }
LatentShape LdmAdapter::latent_shape() const { return inner_->latent_shape(); }
std::vector<LayerInfo> LdmAdapter::cross_layers() const { return inner_->cross_layers(); }
std::vector<LayerInfo> LdmAdapter::self_layers() const { return inner_->self_layers(); }

std::vector<std::string> LdmAdapter::tokenize(std::string_view text) const {
    return guarded("tokenize", [&] { return inner_->tokenize(text); });
}

TextEmbedding LdmAdapter::encode(const std::vector<std::string>& tokens, Stream stream) const {
    auto e = guarded("encode", [&] { return inner_->encode(tokens, stream); });
    if (e.vectors.rows() != e.tokens.size()) throw BackboneFailure("runtime embedding rows do not match tokens");
    return e;
}

TextEmbedding LdmAdapter::encode_unconditional() const {
    return guarded("encode_unconditional", [&] { return inner_->encode_unconditional(); });
}

SamplerSchedule LdmAdapter::schedule(int num_steps) const {
    auto s = guarded("schedule", [&] { return inner_->schedule(num_steps); });
    s.validate();
    if (s.num_steps != num_steps) throw BackboneFailure("runtime schedule has the wrong length");
    return s;
}

NoiseOutput LdmAdapter::predict_noise(const LatentState& state, const Timestep& ts, const TextEmbedding& text,
                                      const AttentionHooks* hooks) const {
    if (state.shape != latent_shape() || state.z.size() != state.shape.size())
        throw BackboneFailure("latent does not match the runtime");
    auto out = guarded("predict_noise", [&] { return inner_->predict_noise(state, ts, text, hooks); });
    if (out.noise.size() != state.z.size()) throw BackboneFailure("runtime noise has the wrong size");
    if (!all_finite(out.noise)) throw BackboneFailure("runtime produced non-finite noise");
    for (const auto& layer : out.maps.cross) {
        if (layer.maps.rows() != layer.layer.positions() || layer.maps.cols() != text.tokens.size())
            throw BackboneFailure("runtime cross map '" + layer.layer.id + "' has the wrong shape");
        if (layer.provenance.size() != layer.maps.cols()) throw BackboneFailure("runtime map lacks provenance");
    }
    return out;
}

std::vector<double> LdmAdapter::cross_attention_vjp(const LatentState& state, const Timestep& ts,
                                                    const TextEmbedding& text, const std::string& layer_id,
                                                    std::size_t token, std::span<const double> upstream) const {
    auto g = guarded("cross_attention_vjp",
                     [&] { return inner_->cross_attention_vjp(state, ts, text, layer_id, token, upstream); });
    if (g.size() != state.z.size()) throw BackboneFailure("runtime gradient has the wrong size");
    return g;
}

Image LdmAdapter::decode(const LatentState& state) const {
    auto img = guarded("decode", [&] { return inner_->decode(state); });
    if (img.channels != 3 || img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3)
        throw BackboneFailure("runtime image is not h x w x 3");
    for (double v : img.pixels)
        if (!(v >= 0.0 && v <= 1.0)) throw BackboneFailure("runtime image values outside [0, 1]");
    return img;
}

std::unique_ptr<Backbone> make_backbone(const RunConfig& config) {
    if (config.backbone == "toy") return std::make_unique<ToyBackbone>();
    if (config.backbone == "ldm-adapter") return std::make_unique<LdmAdapter>(LdmOptions{config.ldm_model, config.ldm_device});
    throw InvalidConfig("unknown backbone '" + config.backbone + "'");
}

}  // namespace record
