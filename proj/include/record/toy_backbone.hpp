#pragma once

#include <cstdint>

#include "record/backbone.hpp"

namespace record {

/// Constants of the toy backbone. Every field participates in the forward
/// pass exactly as documented in docs/toy_backbone.md.
struct ToyParams {
    int channels = 4;
    int resolution = 8;
    int width = 16;                    // attention width d and text embedding width
    std::uint64_t weight_seed = 1234;  // seeds every fixed matrix
    double latent_gain = 0.5;          // scales W_z (latent -> query)
    double position_gain = 0.5;        // scales W_pe (position features -> query)
    double value_gain = 0.25;          // V_n = value_gain * W_z^T K_n
    double self_mix = 0.5;             // lambda: share of the self-attention branch
    double latent_passthrough = 0.2;   // mu: share of z kept in the x0 prediction
    double rbf_sigma = 0.22;           // width of the 3x3 grid of positional RBFs
    int upscale = 8;                   // decode upsampling factor
};

/// Small deterministic latent denoiser used by the test-suite and the default
/// CLI configuration. Latent 4x8x8, one cross- and one self-attention layer
/// at 8x8, hash-seeded 16-wide token embeddings, x0-parameterized output.
///
/// Forward pass for latent z (positions p, channels c) and tokens n:
///   Q_p  = W_z z_p + W_pe pe_p            K_n = W_k e_n     V_n = g_v W_z^T K_n
///   A    = softmax(Q K^T / sqrt(d))       (cross hook)      c_p = sum_n A_pn V_n
///   G_p  = [z_p + c_p ; pe_p]             S = softmax(G W_sq^T (G W_sk^T)^T / sqrt(d))  (self hook)
///   x0_p = (1 - lambda) c_p + lambda sum_q S_pq c_q + mu z_p
///   eps  = (z - sqrt(ab_t) x0) / sqrt(1 - ab_t)
class ToyBackbone final : public Backbone {
public:
    explicit ToyBackbone(ToyParams params = {});

    std::string name() const override { return "toy"; }
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

    // Exposed for closed-form checks in tests.
    const ToyParams& params() const noexcept { return params_; }
    std::vector<double> token_vector(const std::string& token) const;
    Matrix keys(const TextEmbedding& text) const;    // tokens x d
    Matrix values(const TextEmbedding& text) const;  // tokens x channels
    const Matrix& position_features() const noexcept { return pe_; }  // positions x features

    static constexpr const char* kCrossLayer = "mid.cross";
    static constexpr const char* kSelfLayer = "mid.self";
    static constexpr const char* kUncondToken = "<|empty|>";

private:
    Matrix queries(const LatentState& state) const;  // positions x d
    void check_latent(const LatentState& state) const;

    ToyParams params_;
    Matrix pe_;     // positions x F
    Matrix w_z_;    // d x C
    Matrix w_pe_;   // d x F
    Matrix w_k_;    // d x d
    Matrix w_sq_;   // d x (C + F)
    Matrix w_sk_;   // d x (C + F)
    Matrix decode_; // 3 x C
};

}  // namespace record
