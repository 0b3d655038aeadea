#include "record/attention.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "record/image.hpp"
#include "record/simd/kernels.hpp"

namespace record {

const char* to_string(Stream s) noexcept {
    switch (s) {
        case Stream::Full: return "full";
        case Stream::Intransitive: return "intransitive";
        case Stream::Unconditional: return "unconditional";
    }
    return "?";
}

const CrossAttentionLayer& AttentionMapSet::layer(const std::string& id) const {
    for (const auto& l : cross)
        if (l.layer.id == id) return l;
    throw ShapeMismatch("no cross-attention layer '" + id + "'");
}

CrossAttentionLayer& AttentionMapSet::layer(const std::string& id) {
    return const_cast<CrossAttentionLayer&>(std::as_const(*this).layer(id));
}

AttentionMap AttentionMapSet::token_map(const std::string& layer_id, std::size_t token_index) const {
    const auto& l = layer(layer_id);
    if (token_index >= l.maps.cols()) throw ShapeMismatch("token index out of range");
    return AttentionMap{l.maps.column(token_index), l.layer.resolution, token_index, layer_id, step,
                        l.provenance.at(token_index)};
}

Matrix compute_attention(const QKInputs& qk) {
    if (qk.d == 0) throw ShapeMismatch("attention width d must be positive");
    if (qk.q.cols() != qk.d || qk.k.cols() != qk.d)
        throw ShapeMismatch("Q and K must both have d = " + std::to_string(qk.d) + " columns");
    if (qk.k.rows() == 0) throw ShapeMismatch("attention needs at least one key");
    Matrix a = matmul_transposed(qk.q, qk.k, 1.0 / std::sqrt(static_cast<double>(qk.d)));
    softmax_rows(a);
    return a;
}

void merge_cross_layer(CrossAttentionLayer& full, const CrossAttentionLayer& intrans, const TokenAlignment& alignment) {
    if (full.layer.resolution != intrans.layer.resolution || full.maps.rows() != intrans.maps.rows())
        throw ResolutionMismatch("cross-attention layer '" + full.layer.id + "' differs in resolution between streams");
    if (alignment.full_size() != 0 && alignment.full_size() != full.maps.cols())
        throw ShapeMismatch("alignment size does not match full-prompt token count");
    for (const auto& [n, j] : alignment.pairs()) {
        if (j >= intrans.maps.cols()) throw ShapeMismatch("aligned token index beyond intransitive tokens");
        for (std::size_t p = 0; p < full.maps.rows(); ++p) full.maps(p, n) = intrans.maps(p, j);
        full.provenance[n] = intrans.provenance[j];
    }
}

AttentionMapSet merge_cross_attention(const AttentionMapSet& full, const AttentionMapSet& intrans,
                                      const TokenAlignment& alignment) {
    if (full.cross.size() != intrans.cross.size()) throw ResolutionMismatch("streams captured different layers");
    AttentionMapSet out = full;
    for (auto& layer : out.cross) merge_cross_layer(layer, intrans.layer(layer.layer.id), alignment);
    return out;
}

Matrix merge_self_attention(const Matrix& full_self, const Matrix& intrans_self, int step, int gamma) {
    if (!full_self.same_shape(intrans_self)) throw ShapeMismatch("self-attention grids differ in shape");
    return self_substitution_active(step, gamma) ? intrans_self : full_self;
}

std::vector<double> normalize_by_max(std::span<const double> values) {
    std::vector<double> out(values.begin(), values.end());
    const double peak = simd::max(out);
    if (!(peak > 0.0)) {
        std::fill(out.begin(), out.end(), 0.0);
        return out;
    }
    simd::scale(1.0 / peak, out);
    // x / max can round a hair above 1 when x == max.
    for (double& v : out) v = std::min(v, 1.0);
    return out;
}

std::vector<double> inverse_mask(std::span<const double> a) {
    for (double v : a)
        if (!(v >= 0.0 && v <= 1.0)) throw ValueOutOfRange("inverse mask input must lie in [0, 1]");
    std::vector<double> out(a.size());
    simd::one_minus(a, out);
    return out;
}

void apply_inverse_mask(std::span<const double> mask, CrossAttentionLayer& layer, std::size_t object_index) {
    if (mask.size() != layer.maps.rows())
        throw ShapeMismatch("mask has " + std::to_string(mask.size()) + " cells, layer '" + layer.layer.id + "' has " +
                            std::to_string(layer.maps.rows()));
    if (object_index >= layer.maps.cols()) throw ShapeMismatch("object token index out of range");
    for (std::size_t p = 0; p < layer.maps.rows(); ++p) {
        auto row = layer.maps.row(p);
        const double keep = row[object_index];
        simd::scale(mask[p], row);
        row[object_index] = keep;
    }
}

AttentionMapSet apply_inverse_mask(const std::map<std::string, std::vector<double>>& masks, const AttentionMapSet& maps,
                                   std::size_t object_index) {
    AttentionMapSet out = maps;
    for (auto& layer : out.cross) {
        auto it = masks.find(layer.layer.id);
        if (it == masks.end()) throw ShapeMismatch("no mask for layer '" + layer.layer.id + "'");
        apply_inverse_mask(it->second, layer, object_index);
    }
    return out;
}

bool rows_sum_to_one(const Matrix& m, double tolerance) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        double s = 0.0;
        for (double v : m.row(r)) s += v;
        if (std::abs(s - 1.0) > tolerance) return false;
    }
    return true;
}

std::vector<double> aggregate_token_map(const AttentionMapSet& set, std::size_t token_index,
                                        const std::vector<std::string>& layer_ids) {
    if (layer_ids.empty()) throw ShapeMismatch("no layers selected for aggregation");
    std::vector<double> acc;
    for (const auto& id : layer_ids) {
        const auto& l = set.layer(id);
        if (token_index >= l.maps.cols()) throw ShapeMismatch("token index out of range");
        const auto col = l.maps.column(token_index);
        if (acc.empty()) acc.assign(col.size(), 0.0);
        if (col.size() != acc.size()) throw ResolutionMismatch("aggregated layers must share a resolution");
        simd::axpy(1.0, col, acc);
    }
    simd::scale(1.0 / static_cast<double>(layer_ids.size()), acc);
    return acc;
}

void write_array(const std::filesystem::path& path, const std::vector<double>& values, int rows, int cols) {
    if (values.size() != static_cast<std::size_t>(rows) * cols) throw ShapeMismatch("array shape mismatch");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << rows << ' ' << cols << '\n';
    char buf[32];
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", values[static_cast<std::size_t>(r) * cols + c]);
            os << (c ? " " : "") << buf;
        }
        os << '\n';
    }
}

std::vector<double> read_array(const std::filesystem::path& path, int& rows, int& cols) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read " + path.string());
    if (!(is >> rows >> cols) || rows < 0 || cols < 0) throw IoError("bad array header in " + path.string());
    std::vector<double> values(static_cast<std::size_t>(rows) * cols);
    for (double& v : values)
        if (!(is >> v)) throw IoError("truncated array " + path.string());
    return values;
}

std::vector<std::filesystem::path> dump_attention(const std::filesystem::path& root, const AttentionMapSet& set,
                                                  const std::string& layer_id) {
    std::vector<std::filesystem::path> written;
    const auto& layer = set.layer(layer_id);
    const int r = layer.layer.resolution;
    const auto dir = root / std::to_string(set.step) / layer_id;
    for (std::size_t n = 0; n < layer.maps.cols(); ++n) {
        const auto values = layer.maps.column(n);
        const auto arr = dir / (std::to_string(n) + ".arr");
        const auto png = dir / (std::to_string(n) + ".png");
        write_array(arr, values, r, r);
        Image heat(r, r, 1);
        heat.pixels = normalize_by_max(values);
        write_png(png, upscale_nearest(heat, std::max(1, 64 / std::max(1, r))));
        written.push_back(arr);
        written.push_back(png);
    }
    return written;
}

}  // namespace record
