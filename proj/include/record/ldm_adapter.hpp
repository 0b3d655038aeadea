#pragma once

#include <functional>
#include <memory>
#include <string>

#include "record/backbone.hpp"
#include "record/config.hpp"

namespace record {

struct LdmOptions {
    std::string model;   // model identifier from config (ldm_model)
    std::string device;  // device string from config (ldm_device)
};

using LdmRuntimeFactory = std::function<std::unique_ptr<Backbone>(const LdmOptions&)>;

/// Installs the process-wide latent-diffusion runtime used by `backbone =
/// ldm-adapter`. Passing an empty factory unregisters it.
void register_ldm_runtime(LdmRuntimeFactory factory);
bool ldm_runtime_registered();

/// Forwards to a registered runtime and enforces the backbone contract on
/// everything that comes back: noise and map shapes, finiteness, decoded
/// image range. Runtime exceptions surface as BackboneFailure.
class LdmAdapter final : public Backbone {
public:
    explicit LdmAdapter(LdmOptions options);

    std::string name() const override;
    LatentShape latent_shape() const override;
    std::vector<LayerInfo> cross_layers() const override;
    std::vector<LayerInfo> self_layers() const override;
    std::vector<std::string> tokenize(std::string_view text) const override;
    TextEmbedding encode(const std::vector<std::string>& tokens, Stream stream) const override;
    TextEmbedding encode_unconditional() const override;
    SamplerSchedule schedule(int num_steps) const override;
    NoiseOutput predict_noise(const LatentState& state, const Timestep& ts, const TextEmbedding& text,
                              const AttentionHooks* hooks) const override;
    std::vector<double> cross_attention_vjp(const LatentState& state, const Timestep& ts, const TextEmbedding& text,
                                            const std::string& layer_id, std::size_t token,
                                            std::span<const double> upstream) const override;
    Image decode(const LatentState& state) const override;

    const Backbone& runtime() const noexcept { return *inner_; }

private:
    LdmOptions options_;
    std::unique_ptr<Backbone> inner_;
};

/// `backbone = toy` or `ldm-adapter` from a run config.
std::unique_ptr<Backbone> make_backbone(const RunConfig& config);

}  // namespace record
