#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sparseagg/config.hpp"
#include "sparseagg/fusion.hpp"
#include "sparseagg/params.hpp"
#include "sparseagg/rng.hpp"
#include "sparseagg/sampling.hpp"

namespace sparseagg {

template <typename S>
struct LinearLayer {
    int w = -1, b = -1;

    Tensor<S> operator()(PassContext<S>& ctx, const Tensor<S>& x) const {
        return ctx.tape().linear(x, ctx.use(w), ctx.use(b));
    }
};

// One refinement stage; every stage owns independent parameters.
template <typename S>
struct StageParams {
    LinearLayer<S> embed;       // 11 -> C anchor embedding
    LinearLayer<S> attn_value;  // C -> C value projection
    LinearLayer<S> phi1, phi2;  // C -> C -> 3*K_L keypoint offsets
    LinearLayer<S> psi;         // C -> K*N*S*G group weights
    LinearLayer<S> temp;        // 2C -> C temporal fusion
    LinearLayer<S> depth1a, depth1b, depth2a, depth2b, depth_head;
    LinearLayer<S> reg1, reg2;  // C -> C -> 11 offsets
    LinearLayer<S> cls1, cls2;  // C -> C -> num_classes
};

template <typename S>
struct StageOutput {
    Tensor<S> anchors;       // [M,11] refined
    Tensor<S> features;      // [M,C] reweighted instance features
    Tensor<S> class_logits;  // [M,num_classes]; empty (numel 1) when not computed
    Tensor<S> depth_conf;    // [M]
    Tensor<S> depth_probs;   // [M,D]
    bool has_logits = false;
};

// Gradient flow through the temporal recurrence, chosen per training step.
struct DetachPlan {
    std::vector<unsigned char> detach_past;  // one flag per history frame, oldest first
};

template <typename S>
struct DecoderModel {
    RunConfig cfg;
    ParamStore<S> store;
    int init_features = -1;  // parameter id, [M, C]
    Tensor<S> init_anchors;  // [M, 11] fixed buffer, regenerated from the config
    std::vector<StageParams<S>> stages;
};

namespace detail {

template <typename S>
Tensor<S> xavier(Rng& rng, int fan_in, int fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    return random_uniform<S>(rng, {fan_in, fan_out}, -limit, limit);
}

template <typename S>
LinearLayer<S> add_linear(ParamStore<S>& store, Rng& rng, const std::string& name, int fan_in,
                          int fan_out, bool zero_weight = false, double bias_init = 0.0) {
    LinearLayer<S> l;
    Tensor<S> w = zero_weight ? Tensor<S>({fan_in, fan_out}) : xavier<S>(rng, fan_in, fan_out);
    l.w = store.add(name + ".w", std::move(w));
    l.b = store.add(name + ".b", Tensor<S>::full({fan_out}, static_cast<S>(bias_init)));
    return l;
}

}  // namespace detail

// Initial anchors: positions uniform over the scene range, extents at the
// configured mean, yaw zero, velocity zero.
template <typename S>
Tensor<S> initial_anchors(const RunConfig& cfg) {
    Rng rng = Rng(cfg.seed).fork(11);
    Tensor<S> anchors({cfg.instances, geom::kAnchorDim});
    const double ln_dim = std::log(0.5 * (cfg.dim_min + cfg.dim_max));
    for (int i = 0; i < cfg.instances; ++i) {
        S* a = anchors.v.data() + static_cast<std::size_t>(i) * geom::kAnchorDim;
        a[0] = static_cast<S>(rng.uniform(-cfg.range_xy, cfg.range_xy));
        a[1] = static_cast<S>(rng.uniform(-cfg.range_xy, cfg.range_xy));
        a[2] = static_cast<S>(rng.uniform(cfg.z_min, cfg.z_max));
        a[3] = a[4] = a[5] = static_cast<S>(ln_dim);
        a[6] = S(0);
        a[7] = S(1);
        a[8] = a[9] = a[10] = S(0);
    }
    return anchors;
}

template <typename S>
DecoderModel<S> build_decoder(const RunConfig& cfg) {
    cfg.validate();
    DecoderModel<S> model;
    model.cfg = cfg;
    Rng rng = Rng(cfg.seed).fork(7);
    const int c = cfg.channels;
    const int kl = cfg.learnable_points;
    const int k = cfg.total_points();
    const int nsg = k * cfg.cameras * cfg.scales * cfg.groups;

    model.init_features =
        model.store.add("init.features", random_normal<S>(rng, {cfg.instances, c}, 0.1));
    model.init_anchors = initial_anchors<S>(cfg);

    for (int s = 0; s < cfg.stages; ++s) {
        const std::string p = "stage" + std::to_string(s) + ".";
        StageParams<S> sp;
        sp.embed = detail::add_linear(model.store, rng, p + "embed", geom::kAnchorDim, c);
        sp.attn_value = detail::add_linear(model.store, rng, p + "attn_value", c, c);
        sp.phi1 = detail::add_linear(model.store, rng, p + "phi1", c, c);
        sp.phi2 = detail::add_linear(model.store, rng, p + "phi2", c, kl > 0 ? 3 * kl : 1,
                                     /*zero_weight=*/true);
        sp.psi = detail::add_linear(model.store, rng, p + "psi", c, nsg, /*zero_weight=*/true);
        {
            // temporal fusion starts as the average of the two frames
            Tensor<S> tw({2 * c, c});
            for (int i = 0; i < c; ++i) {
                tw.v[static_cast<std::size_t>(i) * c + i] = S(0.5);
                tw.v[static_cast<std::size_t>(i + c) * c + i] = S(0.5);
            }
            sp.temp.w = model.store.add(p + "temp.w", std::move(tw));
            sp.temp.b = model.store.add(p + "temp.b", Tensor<S>({c}));
        }
        sp.depth1a = detail::add_linear(model.store, rng, p + "depth1a", c, c);
        sp.depth1b = detail::add_linear(model.store, rng, p + "depth1b", c, c);
        sp.depth2a = detail::add_linear(model.store, rng, p + "depth2a", c, c);
        sp.depth2b = detail::add_linear(model.store, rng, p + "depth2b", c, c);
        sp.depth_head = detail::add_linear(model.store, rng, p + "depth_head", c, cfg.depth_bins,
                                           /*zero_weight=*/true);
        sp.reg1 = detail::add_linear(model.store, rng, p + "reg1", c, c);
        sp.reg2 = detail::add_linear(model.store, rng, p + "reg2", c, geom::kAnchorDim,
                                     /*zero_weight=*/true);
        sp.cls1 = detail::add_linear(model.store, rng, p + "cls1", c, c);
        sp.cls2 = detail::add_linear(model.store, rng, p + "cls2", c, cfg.num_classes,
                                     /*zero_weight=*/true, /*bias_init=*/-4.5951198501345898);
        model.stages.push_back(sp);
    }
    return model;
}

// Linear embedding of the 11 anchor parameters, positions divided by the
// spatial normalizer first.
template <typename S>
Tensor<S> anchor_embedding(PassContext<S>& ctx, const Tensor<S>& anchors,
                           const LinearLayer<S>& embed, double pos_norm) {
    Tensor<S> norm({anchors.shape[0], geom::kAnchorDim});
    const S inv = static_cast<S>(1.0 / pos_norm);
    for (int i = 0; i < anchors.shape[0]; ++i) {
        for (int j = 0; j < geom::kAnchorDim; ++j) {
            norm.v[static_cast<std::size_t>(i) * geom::kAnchorDim + j] = j < 3 ? inv : S(1);
        }
    }
    return embed(ctx, ctx.tape().mul(anchors, norm));
}

// Scaled dot-product self-attention across instances: queries and keys are
// the features with the anchor embedding added, values go through one
// projection, and the result is a residual update.
template <typename S>
Tensor<S> self_attention(PassContext<S>& ctx, const Tensor<S>& features, const Tensor<S>& embed,
                         const LinearLayer<S>& value_proj, int heads) {
    Tape<S>& tape = ctx.tape();
    const int c = features.shape[1];
    if (c % heads != 0) throw ConfigError("attention: channels not divisible by heads");
    const int ch = c / heads;
    const Tensor<S> qk = tape.add(features, embed);
    const Tensor<S> v = value_proj(ctx, features);
    std::vector<Tensor<S>> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const Tensor<S> qh = heads == 1 ? qk : tape.slice(qk, 1, h * ch, ch);
        const Tensor<S> vh = heads == 1 ? v : tape.slice(v, 1, h * ch, ch);
        auto scores = tape.scale(tape.matmul_nt(qh, qh), static_cast<S>(1.0 / std::sqrt(double(ch))));
        auto attn = tape.softmax(scores, 1);
        outs.push_back(tape.matmul(attn, vh));
    }
    const Tensor<S> mix = heads == 1 ? outs[0] : tape.concat(outs, 1);
    return tape.add(features, mix);
}

// Additive refinement in anchor parameter space; (sin, cos) renormalized to
// unit length afterwards, resetting to yaw 0 if both land near zero.
template <typename S>
Tensor<S> refine_anchors(Tape<S>& tape, const Tensor<S>& anchors, const Tensor<S>& offsets) {
    if (anchors.shape != offsets.shape || anchors.rank() != 2 ||
        anchors.shape[1] != geom::kAnchorDim) {
        throw ContractError("refine: anchors and offsets must both be [M,11]");
    }
    const int m = anchors.shape[0];
    std::vector<S> out(anchors.v.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = anchors.v[i] + offsets.v[i];
    for (int i = 0; i < m; ++i) {
        S& sy = out[static_cast<std::size_t>(i) * geom::kAnchorDim + 6];
        S& cy = out[static_cast<std::size_t>(i) * geom::kAnchorDim + 7];
        if (std::abs(sy) < S(1e-8) && std::abs(cy) < S(1e-8)) {
            sy = S(0);
            cy = S(1);
        } else {
            const S n = std::sqrt(sy * sy + cy * cy);
            sy /= n;
            cy /= n;
        }
    }
    const int ai = tape.lift(anchors), oi = tape.lift(offsets);
    return tape.record("refine_anchors", {ai, oi}, anchors.shape, std::move(out),
                       [m](Tape<S>& tp, int id) {
                           const auto& nd = tp.node(id);
                           const auto& g = tp.grad(id);
                           const auto& av = tp.values(nd.inputs[0]);
                           const auto& ov = tp.values(nd.inputs[1]);
                           for (int input = 0; input < 2; ++input) {
                               auto& gi = tp.grad(nd.inputs[static_cast<std::size_t>(input)]);
                               for (int i = 0; i < m; ++i) {
                                   const std::size_t base = static_cast<std::size_t>(i) * geom::kAnchorDim;
                                   for (int j = 0; j < geom::kAnchorDim; ++j) {
                                       if (j == 6 || j == 7) continue;
                                       gi[base + static_cast<std::size_t>(j)] += g[base + static_cast<std::size_t>(j)];
                                   }
                                   const S sy = av[base + 6] + ov[base + 6];
                                   const S cy = av[base + 7] + ov[base + 7];
                                   if (std::abs(sy) < S(1e-8) && std::abs(cy) < S(1e-8)) continue;
                                   const S n2 = sy * sy + cy * cy;
                                   const S n3 = n2 * std::sqrt(n2);
                                   const S gs = g[base + 6], gc = g[base + 7];
                                   gi[base + 6] += (gs * cy * cy - gc * sy * cy) / n3;
                                   gi[base + 7] += (gc * sy * sy - gs * sy * cy) / n3;
                               }
                           }
                       });
}

// Discrete depth distribution head: two residual blocks then a linear D-way
// head, softmax normalized.
template <typename S>
DepthDistribution<S> predict_depth_distribution(PassContext<S>& ctx, const Tensor<S>& feat,
                                                const StageParams<S>& sp, const RunConfig& cfg) {
    Tape<S>& tape = ctx.tape();
    Tensor<S> x = feat;
    x = tape.add(x, sp.depth1b(ctx, tape.relu(sp.depth1a(ctx, x))));
    x = tape.add(x, sp.depth2b(ctx, tape.relu(sp.depth2a(ctx, x))));
    DepthDistribution<S> dist;
    dist.probs = tape.softmax(sp.depth_head(ctx, x), 1);
    dist.depth_min = cfg.depth_min;
    dist.depth_max = cfg.depth_max;
    return dist;
}

// One full decoder pass. Optional overrides replace the model's initial
// anchors/features (used by tests and gradient checks); anchors are detached
// between stages, features flow with gradients.
template <typename S>
std::vector<StageOutput<S>> decoder_forward(PassContext<S>& ctx, const DecoderModel<S>& model,
                                            const FeatureQueue<S>& queue,
                                            const DetachPlan& plan = {},
                                            const Tensor<S>* anchors_override = nullptr,
                                            const Tensor<S>* features_override = nullptr) {
    Tape<S>& tape = ctx.tape();
    const RunConfig& cfg = model.cfg;
    queue.validate();
    if (queue.channels != cfg.channels) {
        throw ContractError("decoder: queue channels " + std::to_string(queue.channels) +
                            " != model channels " + std::to_string(cfg.channels));
    }

    Tensor<S> features = features_override ? *features_override : ctx.use(model.init_features);
    Tensor<S> anchors = anchors_override ? *anchors_override : model.init_anchors;

    std::vector<StageOutput<S>> outputs;
    outputs.reserve(static_cast<std::size_t>(cfg.stages));
    for (int s = 0; s < cfg.stages; ++s) {
        const StageParams<S>& sp = model.stages[static_cast<std::size_t>(s)];
        const Tensor<S> embed = anchor_embedding(ctx, anchors, sp.embed, cfg.pos_norm);

        // (1) instance interaction, embedding added into queries/keys
        features = self_attention(ctx, features, embed, sp.attn_value, cfg.attn_heads);
        // (2) embedding added again before keypoint/weight prediction
        const Tensor<S> fplus = tape.add(features, embed);

        // (3) deformable aggregation
        Tensor<S> phi_raw;
        if (cfg.learnable_points > 0) {
            phi_raw = sp.phi2(ctx, tape.relu(sp.phi1(ctx, fplus)));
        }
        const Tensor<S> current = keypoints_current(tape, anchors, phi_raw, cfg.learnable_points);
        const Tensor<S> points4d = propagate_keypoints(tape, current, anchors, queue.clock,
                                                       queue.poses, cfg.ego_compensation);
        const SampledFeatures<S> sampled = sample_features(tape, points4d, queue);
        const Tensor<S> wgt =
            predict_group_weights(tape, fplus, ctx.use(sp.psi.w), ctx.use(sp.psi.b),
                                  cfg.total_points(), cfg.cameras * cfg.scales, cfg.groups,
                                  cfg.weight_norm);
        const Tensor<S> per_frame = fuse_view_scale(tape, sampled.features, wgt);
        const Tensor<S> per_point =
            fuse_temporal(tape, per_frame, ctx.use(sp.temp.w), ctx.use(sp.temp.b), plan.detach_past);
        const Tensor<S> aggregated = fuse_keypoints(tape, per_point);

        // (4) depth reweighting
        const DepthDistribution<S> dist = predict_depth_distribution(ctx, aggregated, sp, cfg);
        const Tensor<S> conf = sample_confidence(tape, dist, anchors);
        const Tensor<S> reweighted = depth_reweight(tape, aggregated, conf);

        // (5) heads and anchor update
        const Tensor<S> offsets = sp.reg2(ctx, tape.relu(sp.reg1(ctx, reweighted)));
        const Tensor<S> refined = refine_anchors(tape, anchors, offsets);

        StageOutput<S> out;
        out.anchors = refined;
        out.features = reweighted;
        out.depth_conf = conf;
        out.depth_probs = dist.probs;
        if (cfg.classify_every_stage || s == cfg.stages - 1) {
            out.class_logits = sp.cls2(ctx, tape.relu(sp.cls1(ctx, reweighted)));
            out.has_logits = true;
        }
        outputs.push_back(out);

        // (6) next stage: reweighted features flow with gradients, anchors do not
        features = reweighted;
        anchors = refined.detached();
    }
    return outputs;
}

}  // namespace sparseagg
