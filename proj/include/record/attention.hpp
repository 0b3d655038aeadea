#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "record/prompt.hpp"
#include "record/tensor.hpp"

namespace record {

/// Which prompt stream produced a map.
enum class Stream : std::uint8_t { Full, Intransitive, Unconditional };

const char* to_string(Stream s) noexcept;

struct LayerInfo {
    std::string id;
    int resolution = 0;  // maps are resolution x resolution, flattened row-major

    std::size_t positions() const noexcept { return static_cast<std::size_t>(resolution) * resolution; }
    friend bool operator==(const LayerInfo&, const LayerInfo&) = default;
};

/// One token's spatial map at one layer and step.
struct AttentionMap {
    std::vector<double> values;
    int resolution = 0;
    std::size_t token_index = 0;
    std::string layer_id;
    int step = 0;
    Stream source = Stream::Full;
};

/// Cross-attention of one layer: rows are spatial positions, columns are
/// tokens. `provenance[n]` records which stream token column n came from.
struct CrossAttentionLayer {
    LayerInfo layer;
    Matrix maps;
    std::vector<Stream> provenance;
};

struct AttentionMapSet {
    int step = 0;
    std::vector<CrossAttentionLayer> cross;
    std::map<std::string, Matrix> self_;  // layer id -> positions x positions

    const CrossAttentionLayer& layer(const std::string& id) const;
    CrossAttentionLayer& layer(const std::string& id);
    AttentionMap token_map(const std::string& layer_id, std::size_t token_index) const;
    std::size_t token_count() const noexcept { return cross.empty() ? 0 : cross.front().maps.cols(); }
};

struct QKInputs {
    Matrix q;  // positions x d
    Matrix k;  // tokens x d
    std::size_t d = 0;
};

/// Softmax(Q K^T / sqrt(d)), row-stochastic (positions x tokens).
Matrix compute_attention(const QKInputs& qk);

/// Cross maps for aligned tokens come from the intransitive set; every other
/// token keeps its full-prompt map.
AttentionMapSet merge_cross_attention(const AttentionMapSet& full, const AttentionMapSet& intrans,
                                      const TokenAlignment& alignment);

/// Single-layer form of merge_cross_attention, used inside backbone hooks.
void merge_cross_layer(CrossAttentionLayer& full, const CrossAttentionLayer& intrans,
                       const TokenAlignment& alignment);

/// Self-attention substitution gate: true iff step > gamma.
constexpr bool self_substitution_active(int step, int gamma) noexcept { return step > gamma; }

/// Intransitive self-attention when step > gamma, otherwise the full grid.
Matrix merge_self_attention(const Matrix& full_self, const Matrix& intrans_self, int step, int gamma);

/// Divides by the maximum; an all-zero (or max <= 0) map stays all zero.
std::vector<double> normalize_by_max(std::span<const double> values);

/// 1 - A_m for a map already normalized to [0, 1].
std::vector<double> inverse_mask(std::span<const double> normalized_object_map);

/// Multiplies every token column n != object_index by `mask`.
void apply_inverse_mask(std::span<const double> mask, CrossAttentionLayer& layer, std::size_t object_index);

/// Set-level form: `masks` holds one mask per cross layer id.
AttentionMapSet apply_inverse_mask(const std::map<std::string, std::vector<double>>& masks,
                                   const AttentionMapSet& maps, std::size_t object_index);

/// Row-sum check for captured (unmodified) attention.
bool rows_sum_to_one(const Matrix& m, double tolerance);

/// Mean of one token's map over the given layers (all must share a resolution).
std::vector<double> aggregate_token_map(const AttentionMapSet& set, std::size_t token_index,
                                        const std::vector<std::string>& layer_ids);

// Dumps: <root>/<step>/<layer>/<token>.arr (text: "rows cols" then rows of
// values) and <token>.png (8-bit grayscale heatmap, scaled by the map max).
void write_array(const std::filesystem::path& path, const std::vector<double>& values, int rows, int cols);
std::vector<double> read_array(const std::filesystem::path& path, int& rows, int& cols);
std::vector<std::filesystem::path> dump_attention(const std::filesystem::path& root, const AttentionMapSet& set,
                                                  const std::string& layer_id);

}  // namespace record
