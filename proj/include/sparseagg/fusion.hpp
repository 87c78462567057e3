#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sparseagg/geometry.hpp"
#include "sparseagg/kernels.hpp"
#include "sparseagg/tape.hpp"

namespace sparseagg {

// Group weighting coefficients from one linear layer over the instance
// feature (anchor embedding already added): logits [M, K*NS*G] reshaped to
// [M, K, NS, G] and normalized over the flattened view/scale axis. The
// softmax mode makes every group a convex combination; sigmoid is the
// unnormalized variant.
template <typename S>
Tensor<S> predict_group_weights(Tape<S>& tape, const Tensor<S>& feat, const Tensor<S>& w,
                                const Tensor<S>& b, int points, int view_scales, int groups,
                                const std::string& mode = "softmax") {
    if (feat.rank() != 2) throw ContractError("weights: feature must be [M,C]");
    const int c = feat.shape[1];
    if (c % groups != 0) {
        throw ConfigError("weights: channel count " + std::to_string(c) +
                          " not divisible by group count " + std::to_string(groups));
    }
    if (w.shape[1] != points * view_scales * groups) {
        throw ContractError("weights: head width " + std::to_string(w.shape[1]) +
                            " != K*N*S*G = " + std::to_string(points * view_scales * groups));
    }
    auto logits = tape.reshape(tape.linear(feat, w, b), {feat.shape[0], points, view_scales, groups});
    if (mode == "sigmoid") return tape.sigmoid(logits);
    return tape.softmax(logits, 2);
}

// Weighted view/scale aggregation with channel groups (weights shared across
// timestamps):
//   f [M,K,T,N,Sc,C], wgt [M,K,N*Sc,G] -> [M,K,T,C]
// out channel ch of group g(ch) sums f over (n,s) with weight wgt[m,k,ns,g(ch)].
template <typename S>
Tensor<S> fuse_view_scale(Tape<S>& tape, const Tensor<S>& f, const Tensor<S>& wgt) {
    if (f.rank() != 6) throw ContractError("fuse_view_scale: f must be [M,K,T,N,S,C]");
    if (wgt.rank() != 4) throw ContractError("fuse_view_scale: weights must be [M,K,NS,G]");
    const int m = f.shape[0], k = f.shape[1], frames = f.shape[2];
    const int ns = f.shape[3] * f.shape[4], c = f.shape[5], g = wgt.shape[3];
    if (wgt.shape[0] != m || wgt.shape[1] != k || wgt.shape[2] != ns) {
        throw ContractError("fuse_view_scale: weight shape " + shape_str(wgt.shape) +
                            " does not match features " + shape_str(f.shape));
    }
    if (c % g != 0) throw ConfigError("fuse_view_scale: channels not divisible by groups");
    const int rows = m * k;
    std::vector<S> out(static_cast<std::size_t>(rows) * frames * c);
    kernels::group_weight_sum(f.v.data(), wgt.v.data(), out.data(), rows, frames, ns, c, g);
    const int fi = tape.lift(f), wi = tape.lift(wgt);
    return tape.record("fuse_view_scale", {fi, wi}, {m, k, frames, c}, std::move(out),
                       [rows, frames, ns, c, g](Tape<S>& tp, int id) {
                           const auto& nd = tp.node(id);
                           const auto& gout = tp.grad(id);
                           kernels::group_weight_sum_grad_f(tp.values(nd.inputs[1]).data(),
                                                            gout.data(), tp.grad(nd.inputs[0]).data(),
                                                            rows, frames, ns, c, g);
                           kernels::group_weight_sum_grad_w(tp.values(nd.inputs[0]).data(),
                                                            gout.data(), tp.grad(nd.inputs[1]).data(),
                                                            rows, frames, ns, c, g);
                       });
}

// Sequential temporal fusion, oldest first:
//   h = f'[t_s];  h = temp_w([f'[t], h]) for t = t_s+1 .. t_0
// With a single frame the slice passes through bit-exactly and the fusion
// layer is never applied. detach_past[t] (t indexing history frames, oldest
// first) cuts the gradient through that frame's f' slice.
template <typename S>
Tensor<S> fuse_temporal(Tape<S>& tape, const Tensor<S>& fprime, const Tensor<S>& w,
                        const Tensor<S>& b,
                        const std::vector<unsigned char>& detach_past = {}) {
    if (fprime.rank() != 4) throw ContractError("fuse_temporal: input must be [M,K,T,C]");
    const int m = fprime.shape[0], k = fprime.shape[1], frames = fprime.shape[2], c = fprime.shape[3];
    if (frames > 1 && (w.rank() != 2 || w.shape[0] != 2 * c || w.shape[1] != c)) {
        throw ContractError("fuse_temporal: fusion layer must map 2C -> C, got w=" +
                            shape_str(w.shape) + " for C=" + std::to_string(c));
    }
    if (!detach_past.empty() && static_cast<int>(detach_past.size()) != frames - 1) {
        throw ContractError("fuse_temporal: detach plan must cover the history frames");
    }
    auto frame_slice = [&](int t) {
        auto sl = tape.reshape(tape.slice(fprime, 2, t, 1), {m * k, c});
        const bool is_history = t < frames - 1;
        if (is_history && !detach_past.empty() && detach_past[static_cast<std::size_t>(t)]) {
            return sl.detached();
        }
        return sl;
    };
    Tensor<S> h = frame_slice(0);
    for (int t = 1; t < frames; ++t) {
        h = tape.linear(tape.concat({frame_slice(t), h}, 1), w, b);
    }
    return tape.reshape(h, {m, k, c});
}

// Final keypoint aggregation: sum over K.
template <typename S>
Tensor<S> fuse_keypoints(Tape<S>& tape, const Tensor<S>& fsecond) {
    if (fsecond.rank() != 3) throw ContractError("fuse_keypoints: input must be [M,K,C]");
    return tape.reduce_sum(fsecond, {1});
}

// Discrete depth distribution over D bins with centers uniform on
// [depth_min, depth_max].
template <typename S>
struct DepthDistribution {
    Tensor<S> probs;  // [M, D]
    double depth_min = 1.0;
    double depth_max = 60.0;
};

// Confidence of each anchor under its predicted depth distribution, linearly
// interpolated at the anchor's ground-plane radial distance sqrt(x^2 + y^2).
// Radii outside the bin range clamp to the boundary bin (zero positional
// gradient there).
template <typename S>
Tensor<S> sample_confidence(Tape<S>& tape, const DepthDistribution<S>& dist,
                            const Tensor<S>& anchors) {
    const Tensor<S>& probs = dist.probs;
    if (probs.rank() != 2 || probs.shape[1] < 2) {
        throw ContractError("confidence: distribution must be [M,D] with D >= 2");
    }
    const int m = probs.shape[0], d = probs.shape[1];
    if (anchors.shape[0] != m || anchors.shape[1] != geom::kAnchorDim) {
        throw ContractError("confidence: anchors must be [M,11] matching the distribution");
    }
    if (!(dist.depth_min < dist.depth_max)) {
        throw ContractError("confidence: depth_min must be < depth_max");
    }
    const S lo = static_cast<S>(dist.depth_min);
    const S span = static_cast<S>(dist.depth_max - dist.depth_min);
    std::vector<S> out(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const S* a = anchors.v.data() + static_cast<std::size_t>(i) * geom::kAnchorDim;
        const S r = std::sqrt(a[0] * a[0] + a[1] * a[1]);
        S pos = (r - lo) / span * static_cast<S>(d - 1);
        const S* p = probs.v.data() + static_cast<std::size_t>(i) * d;
        if (pos <= S(0)) {
            out[static_cast<std::size_t>(i)] = p[0];
        } else if (pos >= S(d - 1)) {
            out[static_cast<std::size_t>(i)] = p[d - 1];
        } else {
            const int j = static_cast<int>(std::floor(static_cast<double>(pos)));
            const S frac = pos - static_cast<S>(j);
            out[static_cast<std::size_t>(i)] = p[j] * (S(1) - frac) + p[j + 1] * frac;
        }
    }
    const int pi = tape.lift(probs), ai = tape.lift(anchors);
    return tape.record(
        "sample_confidence", {pi, ai}, {m}, std::move(out), [m, d, lo, span](Tape<S>& tp, int id) {
            const auto& nd = tp.node(id);
            const auto& g = tp.grad(id);
            const auto& pv = tp.values(nd.inputs[0]);
            const auto& av = tp.values(nd.inputs[1]);
            auto& gp = tp.grad(nd.inputs[0]);
            auto& ga = tp.grad(nd.inputs[1]);
            for (int i = 0; i < m; ++i) {
                const S gi = g[static_cast<std::size_t>(i)];
                if (gi == S(0)) continue;
                const S* a = av.data() + static_cast<std::size_t>(i) * geom::kAnchorDim;
                const S r = std::sqrt(a[0] * a[0] + a[1] * a[1]);
                const S pos = (r - lo) / span * static_cast<S>(d - 1);
                S* gpi = gp.data() + static_cast<std::size_t>(i) * d;
                if (pos <= S(0)) {
                    gpi[0] += gi;
                    continue;
                }
                if (pos >= S(d - 1)) {
                    gpi[d - 1] += gi;
                    continue;
                }
                const int j = static_cast<int>(std::floor(static_cast<double>(pos)));
                const S frac = pos - static_cast<S>(j);
                gpi[j] += gi * (S(1) - frac);
                gpi[j + 1] += gi * frac;
                const S* p = pv.data() + static_cast<std::size_t>(i) * d;
                const S dpos = gi * (p[j + 1] - p[j]) * static_cast<S>(d - 1) / span;
                if (r > S(1e-9)) {
                    S* gai = ga.data() + static_cast<std::size_t>(i) * geom::kAnchorDim;
                    gai[0] += dpos * a[0] / r;
                    gai[1] += dpos * a[1] / r;
                }
            }
        });
}

// Instance feature reweighted by its depth confidence: F'' = conf * F'.
template <typename S>
Tensor<S> depth_reweight(Tape<S>& tape, const Tensor<S>& feat, const Tensor<S>& conf) {
    return tape.row_scale(feat, conf);
}

}  // namespace sparseagg
