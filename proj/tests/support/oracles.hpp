#pragma once

// Straightforward reference implementations used as test oracles. They share
// no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "record/attention.hpp"
#include "record/boxes.hpp"
#include "record/prompt.hpp"

namespace oracle {

/// exp/sum softmax of Q K^T / sqrt(d) in long double, no max shift.
inline std::vector<std::vector<long double>> naive_attention(const record::QKInputs& qk) {
    const std::size_t P = qk.q.rows(), N = qk.k.rows();
    std::vector<std::vector<long double>> out(P, std::vector<long double>(N));
    const long double s = 1.0L / std::sqrt(static_cast<long double>(qk.d));
    for (std::size_t p = 0; p < P; ++p) {
        long double total = 0;
        for (std::size_t n = 0; n < N; ++n) {
            long double dot = 0;
            for (std::size_t i = 0; i < qk.d; ++i) dot += static_cast<long double>(qk.q(p, i)) * qk.k(n, i);
            out[p][n] = std::exp(dot * s);
            total += out[p][n];
        }
        for (auto& v : out[p]) v /= total;
    }
    return out;
}

inline std::vector<int> levels(const std::vector<double>& map) {
    const double lo = *std::min_element(map.begin(), map.end());
    const double hi = *std::max_element(map.begin(), map.end());
    std::vector<int> out;
    for (double v : map) out.push_back(static_cast<int>(std::lround((v - lo) / (hi - lo) * 255.0)));
    return out;
}

/// Exhaustive Otsu: every T in 0..255, variance w0 w1 (mu0 - mu1)^2, first maximum.
inline int otsu(const std::vector<int>& lv) {
    int best_t = 0;
    long double best = -1;
    const long double N = static_cast<long double>(lv.size());
    for (int T = 0; T < 256; ++T) {
        long double n0 = 0, s0 = 0, n1 = 0, s1 = 0;
        for (int v : lv) {
            if (v <= T) {
                n0 += 1;
                s0 += v;
            } else {
                n1 += 1;
                s1 += v;
            }
        }
        long double var = 0;
        if (n0 > 0 && n1 > 0) {
            const long double m0 = s0 / n0, m1 = s1 / n1;
            var = (n0 / N) * (n1 / N) * (m0 - m1) * (m0 - m1);
        }
        // Relative slack absorbs rounding between mathematically equal candidates.
        if (var > best * (1 + 1e-15L) + 1e-30L) {
            best = var;
            best_t = T;
        }
    }
    return best_t;
}

/// Largest 8-connected component by recursive flood fill; ties go to the
/// component found first in raster order.
inline std::vector<int> largest_component(const std::vector<bool>& fg, int w, int h) {
    std::vector<int> label(fg.size(), -1);
    std::vector<std::vector<int>> comps;
    std::function<void(int, int, int)> fill = [&](int x, int y, int id) {
        if (x < 0 || y < 0 || x >= w || y >= h) return;
        const int i = y * w + x;
        if (!fg[i] || label[i] >= 0) return;
        label[i] = id;
        comps[id].push_back(i);
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
                if (dx || dy) fill(x + dx, y + dy, id);
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (fg[y * w + x] && label[y * w + x] < 0) {
                comps.emplace_back();
                fill(x, y, static_cast<int>(comps.size()) - 1);
            }
    std::size_t best = 0;
    for (std::size_t c = 1; c < comps.size(); ++c)
        if (comps[c].size() > comps[best].size()) best = c;
    return comps.empty() ? std::vector<int>{} : comps[best];
}

inline record::BoundingBox object_box(const std::vector<double>& map, int r) {
    const auto lv = levels(map);
    const int T = otsu(lv);
    std::vector<bool> fg(lv.size());
    for (std::size_t i = 0; i < lv.size(); ++i) fg[i] = lv[i] > T;
    const auto comp = largest_component(fg, r, r);
    int x0 = r, y0 = r, x1 = -1, y1 = -1;
    for (int i : comp) {
        x0 = std::min(x0, i % r);
        x1 = std::max(x1, i % r);
        y0 = std::min(y0, i / r);
        y1 = std::max(y1, i / r);
    }
    return {static_cast<double>(x0) / r, static_cast<double>(y0) / r, static_cast<double>(x1 + 1) / r,
            static_cast<double>(y1 + 1) / r};
}

/// Gaussian blob centred at (cx, cy) in normalized coordinates.
inline std::vector<double> blob(int r, double cx, double cy, double sigma) {
    std::vector<double> m(static_cast<std::size_t>(r) * r);
    for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x) {
            const double u = (x + 0.5) / r - cx, v = (y + 0.5) / r - cy;
            m[static_cast<std::size_t>(y) * r + x] = std::exp(-(u * u + v * v) / (2 * sigma * sigma));
        }
    return m;
}

inline record::Matrix random_stochastic(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
    std::exponential_distribution<double> e(1.0);
    record::Matrix m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < cols; ++c) s += (m(r, c) = e(rng) + 1e-12);
        for (std::size_t c = 0; c < cols; ++c) m(r, c) /= s;
    }
    return m;
}

/// A map set with `layers` cross layers at the given resolutions.
inline record::AttentionMapSet random_map_set(std::mt19937_64& rng, const std::vector<int>& resolutions,
                                              std::size_t tokens, record::Stream source) {
    record::AttentionMapSet s;
    int i = 0;
    for (int r : resolutions) {
        record::CrossAttentionLayer l;
        l.layer = {"layer" + std::to_string(i++), r};
        l.maps = random_stochastic(rng, l.layer.positions(), tokens);
        l.provenance.assign(tokens, source);
        s.cross.push_back(std::move(l));
    }
    return s;
}

}  // namespace oracle
