#include "record/toy_backbone.hpp"

#include <algorithm>
#include <cmath>

#include "record/hash.hpp"
#include "record/simd/kernels.hpp"

namespace record {

namespace {

constexpr int kRbfPerAxis = 3;
constexpr int kFeatures = kRbfPerAxis * kRbfPerAxis;

Matrix random_matrix(std::uint64_t seed, std::size_t rows, std::size_t cols, double scale) {
    auto v = gaussian_noise(seed, rows * cols);
    for (double& x : v) x *= scale;
    return Matrix(rows, cols, std::move(v));
}

}  // namespace

ToyBackbone::ToyBackbone(ToyParams params) : params_(params) {
    if (params_.channels < 1 || params_.resolution < 1 || params_.width < 1)
        throw InvalidConfig("toy backbone dimensions must be positive");
    const auto c = static_cast<std::size_t>(params_.channels);
    const auto d = static_cast<std::size_t>(params_.width);
    const auto r = params_.resolution;
    const auto positions = static_cast<std::size_t>(r) * r;
    const auto seed = params_.weight_seed;

    pe_ = Matrix(positions, kFeatures);
    for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x) {
            const double u = (x + 0.5) / r, v = (y + 0.5) / r;
            for (int cy = 0; cy < kRbfPerAxis; ++cy)
                for (int cx = 0; cx < kRbfPerAxis; ++cx) {
                    const double mx = 0.2 + 0.3 * cx, my = 0.2 + 0.3 * cy;
                    const double d2 = (u - mx) * (u - mx) + (v - my) * (v - my);
                    pe_(static_cast<std::size_t>(y) * r + x, static_cast<std::size_t>(cy) * kRbfPerAxis + cx) =
                        std::exp(-d2 / (2.0 * params_.rbf_sigma * params_.rbf_sigma));
                }
        }

    w_z_ = random_matrix(seed + 1, d, c, params_.latent_gain / std::sqrt(static_cast<double>(c)));
    w_pe_ = random_matrix(seed + 2, d, kFeatures, params_.position_gain / std::sqrt(static_cast<double>(kFeatures)));
    w_k_ = random_matrix(seed + 3, d, d, 1.0 / std::sqrt(static_cast<double>(d)));
    const double gs = 1.0 / std::sqrt(static_cast<double>(c + kFeatures));
    w_sq_ = random_matrix(seed + 4, d, c + kFeatures, gs);
    w_sk_ = random_matrix(seed + 5, d, c + kFeatures, gs);

    // Fixed affine colour map; channel c mostly drives one RGB component.
    decode_ = Matrix(3, c, 0.0);
    for (std::size_t k = 0; k < c; ++k) {
        decode_(k % 3, k) += 1.0;
        decode_((k + 1) % 3, k) += 0.25;
    }
}

LatentShape ToyBackbone::latent_shape() const {
    return {params_.channels, params_.resolution, params_.resolution};
}

std::vector<LayerInfo> ToyBackbone::cross_layers() const { return {{kCrossLayer, params_.resolution}}; }

std::vector<LayerInfo> ToyBackbone::self_layers() const { return {{kSelfLayer, params_.resolution}}; }

std::vector<std::string> ToyBackbone::tokenize(std::string_view text) const { return word_tokenize(text); }

std::vector<double> ToyBackbone::token_vector(const std::string& token) const {
    return gaussian_noise(fnv1a64(token), static_cast<std::size_t>(params_.width));
}

TextEmbedding ToyBackbone::encode(const std::vector<std::string>& tokens, Stream stream) const {
    if (tokens.empty()) throw BackboneFailure("toy backbone: cannot encode an empty token list");
    TextEmbedding e;
    e.tokens = tokens;
    e.stream = stream;
    e.vectors = Matrix(tokens.size(), static_cast<std::size_t>(params_.width));
    for (std::size_t n = 0; n < tokens.size(); ++n) {
        const auto v = token_vector(tokens[n]);
        std::copy(v.begin(), v.end(), e.vectors.row(n).begin());
    }
    return e;
}

TextEmbedding ToyBackbone::encode_unconditional() const { return encode({kUncondToken}, Stream::Unconditional); }

SamplerSchedule ToyBackbone::schedule(int num_steps) const { return SamplerSchedule::linear(num_steps, 0.99, 0.05); }

Matrix ToyBackbone::keys(const TextEmbedding& text) const {
    if (text.vectors.cols() != static_cast<std::size_t>(params_.width))
        throw BackboneFailure("toy backbone: embedding width mismatch");
    return matmul_transposed(text.vectors, w_k_);
}

Matrix ToyBackbone::values(const TextEmbedding& text) const {
    Matrix v = matmul(keys(text), w_z_);  // tokens x C, row n = (W_z^T K_n)^T
    simd::scale(params_.value_gain, v.flat());
    return v;
}

void ToyBackbone::check_latent(const LatentState& state) const {
    if (state.shape != latent_shape() || state.z.size() != latent_shape().size())
        throw BackboneFailure("toy backbone: latent shape mismatch");
    if (!all_finite(state.z)) throw BackboneFailure("toy backbone: non-finite latent");
}

Matrix ToyBackbone::queries(const LatentState& state) const {
    const std::size_t positions = state.shape.positions();
    const std::size_t c = static_cast<std::size_t>(state.shape.channels);
    Matrix zp(positions, c);
    for (std::size_t p = 0; p < positions; ++p)
        for (std::size_t k = 0; k < c; ++k) zp(p, k) = state.at(static_cast<int>(k), p);
    Matrix q = matmul_transposed(zp, w_z_);
    const Matrix qpe = matmul_transposed(pe_, w_pe_);
    simd::axpy(1.0, qpe.flat(), q.flat());
    return q;
}

NoiseOutput ToyBackbone::predict_noise(const LatentState& state, const Timestep& ts, const TextEmbedding& text,
                                       const AttentionHooks* hooks) const {
    check_latent(state);
    if (!(ts.alpha_bar > 0.0 && ts.alpha_bar < 1.0))
        throw BackboneFailure("toy backbone: alpha_bar must lie in (0, 1) while denoising");
    const std::size_t positions = state.shape.positions();
    const std::size_t c = static_cast<std::size_t>(state.shape.channels);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(params_.width));

    NoiseOutput out;
    out.maps.step = ts.t;

    // Cross attention.
    CrossAttentionLayer cross;
    cross.layer = cross_layers().front();
    cross.maps = matmul_transposed(queries(state), keys(text), inv_sqrt_d);
    softmax_rows(cross.maps);
    cross.provenance.assign(text.tokens.size(), text.stream);
    if (hooks != nullptr && hooks->on_cross) {
        const Matrix shape(cross.maps.rows(), cross.maps.cols());
        hooks->on_cross(ts, cross);
        check_hook_shape(shape, cross.maps, "cross-attention '" + cross.layer.id + "'");
        if (cross.provenance.size() != cross.maps.cols())
            throw HookShapeMismatch("hook changed the provenance length");
    }
    const Matrix ctx = matmul(cross.maps, values(text));  // positions x C

    // Self attention over [z + ctx ; pe].
    Matrix g(positions, c + pe_.cols());
    for (std::size_t p = 0; p < positions; ++p) {
        for (std::size_t k = 0; k < c; ++k) g(p, k) = state.at(static_cast<int>(k), p) + ctx(p, k);
        for (std::size_t f = 0; f < pe_.cols(); ++f) g(p, c + f) = pe_(p, f);
    }
    const LayerInfo self_layer = self_layers().front();
    Matrix self_maps = matmul_transposed(matmul_transposed(g, w_sq_), matmul_transposed(g, w_sk_), inv_sqrt_d);
    softmax_rows(self_maps);
    if (hooks != nullptr && hooks->on_self) {
        const Matrix shape(self_maps.rows(), self_maps.cols());
        hooks->on_self(ts, self_layer, self_maps);
        check_hook_shape(shape, self_maps, "self-attention '" + self_layer.id + "'");
    }
    const Matrix mixed = matmul(self_maps, ctx);

    const double lambda = params_.self_mix, mu = params_.latent_passthrough;
    const double sqrt_ab = std::sqrt(ts.alpha_bar), sqrt_1m = std::sqrt(1.0 - ts.alpha_bar);
    out.noise.resize(state.z.size());
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t p = 0; p < positions; ++p) {
            const double z = state.at(static_cast<int>(k), p);
            const double x0 = (1.0 - lambda) * ctx(p, k) + lambda * mixed(p, k) + mu * z;
            out.noise[k * positions + p] = (z - sqrt_ab * x0) / sqrt_1m;
        }

    out.maps.cross.push_back(std::move(cross));
    out.maps.self_.emplace(self_layer.id, std::move(self_maps));
    return out;
}

std::vector<double> ToyBackbone::cross_attention_vjp(const LatentState& state, const Timestep&,
                                                     const TextEmbedding& text, const std::string& layer_id,
                                                     std::size_t token, std::span<const double> upstream) const {
    check_latent(state);
    if (layer_id != kCrossLayer) throw BackboneFailure("toy backbone: unknown layer '" + layer_id + "'");
    const std::size_t positions = state.shape.positions();
    if (upstream.size() != positions) throw ShapeMismatch("vjp upstream must have one value per position");
    const Matrix k = keys(text);
    if (token >= k.rows()) throw ShapeMismatch("vjp token out of range");
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(params_.width));
    Matrix a = matmul_transposed(queries(state), k, inv_sqrt_d);
    softmax_rows(a);

    // dL/dlogit_pn = u_p A_pm (delta_nm - A_pn); dL/dQ_p = sum_n dL/dlogit_pn K_n / sqrt(d).
    Matrix g_logit(positions, k.rows());
    for (std::size_t p = 0; p < positions; ++p) {
        const double w = upstream[p] * a(p, token);
        for (std::size_t n = 0; n < k.rows(); ++n) g_logit(p, n) = w * ((n == token ? 1.0 : 0.0) - a(p, n));
    }
    Matrix g_q = matmul(g_logit, k);  // positions x d
    simd::scale(inv_sqrt_d, g_q.flat());
    const Matrix g_z = matmul(g_q, w_z_);  // positions x C

    std::vector<double> grad(state.z.size());
    const std::size_t c = static_cast<std::size_t>(state.shape.channels);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < positions; ++p) grad[ch * positions + p] = g_z(p, ch);
    return grad;
}

Image ToyBackbone::decode(const LatentState& state) const {
    check_latent(state);
    const int r = params_.resolution;
    Image img(r, r, 3);
    for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * r + x;
            for (int rgb = 0; rgb < 3; ++rgb) {
                double v = 0.0;
                for (int k = 0; k < state.shape.channels; ++k) v += decode_(static_cast<std::size_t>(rgb), k) * state.at(k, p);
                img.at(x, y, rgb) = std::clamp(0.5 + 0.25 * v, 0.0, 1.0);
            }
        }
    return upscale_nearest(img, params_.upscale);
}

}  // namespace record
