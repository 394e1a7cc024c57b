#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ceseg/errors.hpp"
#include "ceseg/model_config.hpp"
#include "ceseg/nn/layers.hpp"
#include "ceseg/tensor.hpp"

namespace ceseg {

/**
 * Embedding-space distance as a function of the squared Euclidean distance s
 * between two embedding vectors: 1 - 2 / (1 + exp(s)).
 *
 * Evaluated as tanh(s / 2), which is the same function but never overflows.
 */
template <typename T>
T embedding_distance(T squared_norm) {
    return std::tanh(squared_norm / T(2));
}

/// d/ds of embedding_distance, written in terms of its value d.
template <typename T>
T embedding_distance_slope(T d) {
    return T(0.5) * (T(1) - d * d);
}

template <typename T>
T pairwise_embedding_distance(std::span<const T> e_p, std::span<const T> e_q) {
    if (e_p.size() != e_q.size()) throw InputError("pairwise_embedding_distance: length mismatch");
    T s = 0;
    for (std::size_t c = 0; c < e_p.size(); ++c) {
        const T diff = e_p[c] - e_q[c];
        s += diff * diff;
    }
    return embedding_distance(s);
}

/// Neighbour slice of every slice in a stack of `n_slices`: n - l, or n + l
/// for the first l slices. Requires n_slices >= 2l so every index exists.
inline std::vector<std::size_t> neighbor_indices(std::size_t n_slices, int l) {
    if (l < 1) throw ConfigError("neighbor_indices: l must be >= 1");
    const std::size_t step = std::size_t(l);
    if (n_slices <= step || n_slices < 2 * step) {
        throw InputError("neighbor_indices: a stack of " + std::to_string(n_slices) +
                         " slice(s) is too short for neighbour interval l=" + std::to_string(l) +
                         " (needs at least " + std::to_string(2 * step) + ")");
    }
    std::vector<std::size_t> nb(n_slices);
    for (std::size_t n = 0; n < n_slices; ++n) nb[n] = n < step ? n + step : n - step;
    return nb;
}

/// Distance map D plus, per pixel, the flat in-plane index of the matched
/// neighbour pixel (-1 when the window held no organ pixel).
template <typename T>
struct MatchResult {
    Tensor<T> distance;
    std::vector<std::int32_t> argmin;
};

/**
 * Local neighbouring matching between aligned stacks: slice n of `current` is
 * matched against slice n of `neighbor`.
 *
 * D(p) = min d(e_p, e_q) over neighbour pixels q with P_nb(q) >= threshold
 * inside the (2k+1)^2 window centred on p (clipped at borders); D(p) = 1 when
 * no such q exists. Computed displacement by displacement, correlation-layer
 * style, over whole planes. Since d is monotone in the squared norm, the
 * arg-min is taken on the squared norm and d is evaluated once per pixel;
 * ties keep the first candidate in row-major window order.
 */
template <typename T>
MatchResult<T> neighboring_matching(const Tensor<T>& current, const Tensor<T>& neighbor,
                                    const Tensor<T>& neighbor_prob, int k, double fg_threshold) {
    const Shape& s = current.shape();
    if (neighbor.shape() != s) throw InputError("neighboring_matching: embedding shapes differ");
    if (neighbor_prob.channels() != 1 || neighbor_prob.count() != s.count || neighbor_prob.height() != s.height ||
        neighbor_prob.width() != s.width)
        throw InputError("neighboring_matching: neighbour prediction " + neighbor_prob.shape().str() +
                         " does not align with embeddings " + s.str());
    if (k < 0) throw ConfigError("neighboring_matching: k must be >= 0");

    const std::size_t H = s.height, W = s.width, C = s.channels, HW = s.plane();
    MatchResult<T> out{Tensor<T>(1, s.count, H, W, T(1)), std::vector<std::int32_t>(s.count * HW, -1)};
    std::vector<T> best(HW);
    std::vector<T> sq(W);
    std::vector<T> barrier(HW);  // 0 on organ pixels, +inf elsewhere
    const std::ptrdiff_t kk = k;
    constexpr T inf = std::numeric_limits<T>::infinity();

    for (std::size_t n = 0; n < s.count; ++n) {
        auto prob = neighbor_prob.plane(0, n);
        bool any = false;
        for (std::size_t i = 0; i < HW; ++i) {
            const bool organ = prob[i] >= T(fg_threshold);
            barrier[i] = organ ? T(0) : inf;
            any |= organ;
        }
        if (!any) continue;
        std::fill(best.begin(), best.end(), inf);
        std::int32_t* arg = out.argmin.data() + n * HW;

        for (std::ptrdiff_t dy = -kk; dy <= kk; ++dy) {
            for (std::ptrdiff_t dx = -kk; dx <= kk; ++dx) {
                const std::size_t y_lo = std::size_t(std::max<std::ptrdiff_t>(0, -dy));
                const std::size_t y_hi = std::size_t(std::clamp<std::ptrdiff_t>(std::ptrdiff_t(H) - dy, 0, std::ptrdiff_t(H)));
                const std::size_t x_lo = std::size_t(std::max<std::ptrdiff_t>(0, -dx));
                const std::size_t x_hi = std::size_t(std::clamp<std::ptrdiff_t>(std::ptrdiff_t(W) - dx, 0, std::ptrdiff_t(W)));
                if (y_lo >= y_hi || x_lo >= x_hi) continue;
                const std::ptrdiff_t shift = dy * std::ptrdiff_t(W) + dx;
                const std::size_t len = x_hi - x_lo;

                for (std::size_t y = y_lo; y < y_hi; ++y) {
                    const std::size_t p0 = y * W + x_lo;
                    const std::size_t q0 = std::size_t(std::ptrdiff_t(p0) + shift);
                    T* __restrict acc = sq.data();
                    std::fill(acc, acc + len, T(0));
                    for (std::size_t c = 0; c < C; ++c) {
                        const T* __restrict a = current.data() + current.index(c, n, 0, 0) + p0;
                        const T* __restrict b = neighbor.data() + neighbor.index(c, n, 0, 0) + q0;
                        for (std::size_t i = 0; i < len; ++i) {
                            const T diff = a[i] - b[i];
                            acc[i] += diff * diff;
                        }
                    }
                    // Non-organ candidates become +inf and never win.
                    T* __restrict bp = best.data() + p0;
                    std::int32_t* __restrict ap = arg + p0;
                    const T* __restrict bar = barrier.data() + q0;
                    for (std::size_t i = 0; i < len; ++i) {
                        const T cand = acc[i] + bar[i];
                        const bool better = cand < bp[i];
                        bp[i] = better ? cand : bp[i];
                        ap[i] = better ? std::int32_t(q0 + i) : ap[i];
                    }
                }
            }
        }
        auto dist = out.distance.plane(0, n);
        for (std::size_t p = 0; p < HW; ++p)
            if (arg[p] >= 0) dist[p] = embedding_distance(best[p]);
    }
    return out;
}

/// Sub-gradient of neighboring_matching through the arg-min pixel of each
/// window; accumulates into d_current and d_neighbor.
template <typename T>
void neighboring_matching_backward(const Tensor<T>& current, const Tensor<T>& neighbor, const MatchResult<T>& match,
                                   const Tensor<T>& d_distance, Tensor<T>& d_current, Tensor<T>& d_neighbor) {
    const Shape& s = current.shape();
    const std::size_t HW = s.plane();
    for (std::size_t n = 0; n < s.count; ++n) {
        const std::int32_t* arg = match.argmin.data() + n * HW;
        auto dist = match.distance.plane(0, n);
        auto grad = d_distance.plane(0, n);
        for (std::size_t p = 0; p < HW; ++p) {
            if (arg[p] < 0) continue;
            const T g = T(2) * grad[p] * embedding_distance_slope(dist[p]);
            if (g == T(0)) continue;
            const std::size_t q = std::size_t(arg[p]);
            for (std::size_t c = 0; c < s.channels; ++c) {
                const T diff = current.at(c, n, p / s.width, p % s.width) - neighbor.at(c, n, q / s.width, q % s.width);
                d_current.at(c, n, p / s.width, p % s.width) += g * diff;
                d_neighbor.at(c, n, q / s.width, q % s.width) -= g * diff;
            }
        }
    }
}

/// Everything the CE block computes for one stack.
template <typename T>
struct CEOutput {
    Tensor<T> final_prediction;   ///< P_CE
    Tensor<T> refined;            ///< P' from the matching branch
    Tensor<T> distance;           ///< D
    Tensor<T> embedding;          ///< E
    std::vector<std::size_t> neighbors;
    typename Tensor<T>::RowMatrix scores;  ///< AMM gate per slice, [N x 2]
};

/**
 * Contextual embedding block.
 *
 * From backbone features B and decoder predictions P of a contiguous slice
 * stack it computes embeddings E, matches every slice against its neighbour
 * slice to get D, predicts P' from [B, D, P_nb], and fuses P with P' through
 * the attention merge module into the final prediction. The neighbour cue
 * is always the decoder's own P.
 */
template <typename T>
class CEBlock {
public:
    using RowMatrix = typename Tensor<T>::RowMatrix;

    CEBlock() = default;
    CEBlock(const ModelConfig& config, std::uint64_t seed) : config_(config) {
        config.validate();
        std::mt19937_64 rng(seed);
        const std::size_t b = std::size_t(config.base_channels);
        const std::size_t e = std::size_t(config.embed_channels);
        const std::size_t r2 = 2 * std::size_t(config.r);
        embed_ = nn::ConvStack<T>("ce.embed", b, e, 3, rng);
        match_ = nn::ConvStack<T>("ce.match", b + 2, b, 2, rng);
        match_head_ = nn::Conv2d<T>("ce.match.head", b, 1, 1, rng);
        fc1_ = nn::Linear<T>("ce.amm.fc1", 2, r2, rng);
        fc2_ = nn::Linear<T>("ce.amm.fc2", r2, 2, rng);
        final_ = nn::ConvStack<T>("ce.final", 2, b, 1, rng);
        final_head_ = nn::Conv2d<T>("ce.final.head", b, 1, 1, rng);
    }

    const ModelConfig& config() const noexcept { return config_; }

    Tensor<T> embed(const Tensor<T>& features) const {
        if (features.channels() != std::size_t(config_.base_channels))
            throw ConfigError("CEBlock::embed: expected " + std::to_string(config_.base_channels) +
                              " feature channels, got " + std::to_string(features.channels()));
        return embed_.infer(features);
    }

    /// P' = sigmoid(head(convs([B, D, P_nb]))).
    Tensor<T> refine(const Tensor<T>& features, const Tensor<T>& distance, const Tensor<T>& neighbor_prob) const {
        const Tensor<T> x = concat_channels<T>({&features, &distance, &neighbor_prob});
        return nn::sigmoid(match_head_.infer(match_.infer(x)));
    }

    /// Global average pooling of each channel of each slice: [N x C].
    static RowMatrix amm_squeeze(const Tensor<T>& u) {
        RowMatrix v(Eigen::Index(u.count()), Eigen::Index(u.channels()));
        for (std::size_t c = 0; c < u.channels(); ++c)
            for (std::size_t n = 0; n < u.count(); ++n) {
                T sum = 0;
                for (T x : u.plane(c, n)) sum += x;
                v(Eigen::Index(n), Eigen::Index(c)) = sum / T(u.shape().plane());
            }
        return v;
    }

    /// s = sigmoid(W2 relu(W1 v + b1) + b2), row-wise.
    RowMatrix amm_score(const RowMatrix& v) const {
        RowMatrix h = fc1_.infer(v).cwiseMax(T(0));
        return fc2_.infer(h).unaryExpr([](T x) { return nn::sigmoid(x); });
    }

    /// Re-weights [P, P'] by the gate and applies the final segmentation convs.
    Tensor<T> amm_merge(const Tensor<T>& prediction, const Tensor<T>& refined) const {
        Tensor<T> u = concat_channels<T>({&prediction, &refined});
        const RowMatrix s = amm_score(amm_squeeze(u));
        scale_by_gate(u, s);
        return nn::sigmoid(final_head_.infer(final_.infer(u)));
    }

    CEOutput<T> infer(const Tensor<T>& features, const Tensor<T>& prediction) const {
        CEOutput<T> out;
        out.neighbors = neighbor_indices(prediction.count(), config_.l);
        out.embedding = embed(features);
        const Tensor<T> e_nb = gather_slices(out.embedding, out.neighbors);
        const Tensor<T> p_nb = gather_slices(prediction, out.neighbors);
        out.distance = neighboring_matching(out.embedding, e_nb, p_nb, config_.k, config_.fg_threshold).distance;
        out.refined = refine(features, out.distance, p_nb);
        Tensor<T> u = concat_channels<T>({&prediction, &out.refined});
        out.scores = amm_score(amm_squeeze(u));
        scale_by_gate(u, out.scores);
        out.final_prediction = nn::sigmoid(final_head_.infer(final_.infer(u)));
        return out;
    }

    /// Training-mode forward; caches what backward() needs.
    CEOutput<T> forward(const Tensor<T>& features, const Tensor<T>& prediction) {
        if (features.channels() != std::size_t(config_.base_channels))
            throw ConfigError("CEBlock: feature channel mismatch");
        CEOutput<T> out;
        out.neighbors = neighbor_indices(prediction.count(), config_.l);
        out.embedding = embed_.forward(features);
        const Tensor<T> e_nb = gather_slices(out.embedding, out.neighbors);
        const Tensor<T> p_nb = gather_slices(prediction, out.neighbors);
        match_cache_ = neighboring_matching(out.embedding, e_nb, p_nb, config_.k, config_.fg_threshold);
        out.distance = match_cache_.distance;
        const Tensor<T> x = concat_channels<T>({&features, &out.distance, &p_nb});
        out.refined = nn::sigmoid(match_head_.forward(match_.forward(x)));

        u_ = concat_channels<T>({&prediction, &out.refined});
        const RowMatrix v = amm_squeeze(u_);
        hidden_ = fc1_.forward(v);
        const RowMatrix h = hidden_.cwiseMax(T(0));
        scores_ = fc2_.forward(h).unaryExpr([](T z) { return nn::sigmoid(z); });
        out.scores = scores_;
        Tensor<T> gated = u_;
        scale_by_gate(gated, scores_);
        out.final_prediction = nn::sigmoid(final_head_.forward(final_.forward(gated)));

        embedding_ = out.embedding;
        neighbor_embedding_ = e_nb;
        refined_ = out.refined;
        final_out_ = out.final_prediction;
        neighbors_ = out.neighbors;
        return out;
    }

    /// Accumulates parameter gradients; returns (dL/dB, dL/dP).
    std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& d_final) {
        const std::size_t C = 2;
        const std::size_t N = u_.count();
        const std::size_t plane = u_.shape().plane();

        // Final segmentation convs.
        Tensor<T> d_gated = final_.backward(final_head_.backward(nn::sigmoid_backward(final_out_, d_final)));

        // F_mul: gated_c = s_c * u_c.
        Tensor<T> d_u(u_.shape());
        RowMatrix d_scores = RowMatrix::Zero(Eigen::Index(N), Eigen::Index(C));
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t n = 0; n < N; ++n) {
                const T s = scores_(Eigen::Index(n), Eigen::Index(c));
                auto g = d_gated.plane(c, n);
                auto u = u_.plane(c, n);
                auto du = d_u.plane(c, n);
                T acc = 0;
                for (std::size_t i = 0; i < plane; ++i) {
                    du[i] = s * g[i];
                    acc += g[i] * u[i];
                }
                d_scores(Eigen::Index(n), Eigen::Index(c)) = acc;
            }

        // F_score and F_sq.
        RowMatrix d_logits = d_scores.cwiseProduct(scores_.unaryExpr([](T s) { return s * (T(1) - s); }));
        RowMatrix d_hidden = fc2_.backward(d_logits);
        for (Eigen::Index i = 0; i < d_hidden.size(); ++i)
            if (!(hidden_.data()[i] > T(0))) d_hidden.data()[i] = T(0);
        const RowMatrix d_v = fc1_.backward(d_hidden);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t n = 0; n < N; ++n) {
                const T g = d_v(Eigen::Index(n), Eigen::Index(c)) / T(plane);
                for (auto& x : d_u.plane(c, n)) x += g;
            }

        Tensor<T> d_prediction = slice_channels(d_u, 0, 1);
        const Tensor<T> d_refined = slice_channels(d_u, 1, 1);

        // Matching branch: [B, D, P_nb] -> P'.
        const Tensor<T> d_x = match_.backward(match_head_.backward(nn::sigmoid_backward(refined_, d_refined)));
        const std::size_t b = std::size_t(config_.base_channels);
        Tensor<T> d_features = slice_channels(d_x, 0, b);
        const Tensor<T> d_distance = slice_channels(d_x, b, 1);
        scatter_add_slices(d_prediction, slice_channels(d_x, b + 1, 1), neighbors_);

        Tensor<T> d_embedding(embedding_.shape());
        Tensor<T> d_neighbor(embedding_.shape());
        neighboring_matching_backward(embedding_, neighbor_embedding_, match_cache_, d_distance, d_embedding,
                                      d_neighbor);
        scatter_add_slices(d_embedding, d_neighbor, neighbors_);
        add_into(d_features, embed_.backward(d_embedding));
        return {std::move(d_features), std::move(d_prediction)};
    }

    /// Parameter groups in a fixed order: embed head, matching convs, AMM FCs, final convs.
    void visit_embed(const nn::ParamVisitor<T>& f) { embed_.visit(f); }
    void visit_match(const nn::ParamVisitor<T>& f) {
        match_.visit(f);
        match_head_.visit(f);
    }
    void visit_amm(const nn::ParamVisitor<T>& f) {
        fc1_.visit(f);
        fc2_.visit(f);
    }
    void visit_final(const nn::ParamVisitor<T>& f) {
        final_.visit(f);
        final_head_.visit(f);
    }
    void visit(const nn::ParamVisitor<T>& f) {
        visit_embed(f);
        visit_match(f);
        visit_amm(f);
        visit_final(f);
    }

    /// ReLU masks and matching arg-mins of the last forward(). The block is
    /// differentiable wherever this stays fixed.
    void append_regime(std::vector<std::int32_t>& out) const {
        embed_.append_regime(out);
        match_.append_regime(out);
        final_.append_regime(out);
        for (Eigen::Index i = 0; i < hidden_.size(); ++i) out.push_back(hidden_.data()[i] > T(0));
        out.insert(out.end(), match_cache_.argmin.begin(), match_cache_.argmin.end());
    }

private:
    static void scale_by_gate(Tensor<T>& u, const RowMatrix& s) {
        for (std::size_t c = 0; c < u.channels(); ++c)
            for (std::size_t n = 0; n < u.count(); ++n) {
                const T g = s(Eigen::Index(n), Eigen::Index(c));
                for (auto& x : u.plane(c, n)) x *= g;
            }
    }

    ModelConfig config_{};
    nn::ConvStack<T> embed_;
    nn::ConvStack<T> match_;
    nn::Conv2d<T> match_head_;
    nn::Linear<T> fc1_, fc2_;
    nn::ConvStack<T> final_;
    nn::Conv2d<T> final_head_;

    MatchResult<T> match_cache_;
    Tensor<T> embedding_, neighbor_embedding_, refined_, final_out_, u_;
    RowMatrix hidden_, scores_;
    std::vector<std::size_t> neighbors_;
};

}  // namespace ceseg
