#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "sparseagg/config.hpp"
#include "sparseagg/decoder.hpp"
#include "sparseagg/evaluate.hpp"
#include "sparseagg/losses.hpp"
#include "sparseagg/scene.hpp"

namespace sparseagg {

// Decoupled weight decay Adam.
template <typename S>
class AdamW {
 public:
    AdamW(const RunConfig& cfg, const ParamStore<S>& store)
        : beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_eps), decay_(cfg.weight_decay) {
        m_.resize(static_cast<std::size_t>(store.count()));
        v_.resize(static_cast<std::size_t>(store.count()));
        for (int i = 0; i < store.count(); ++i) {
            m_[static_cast<std::size_t>(i)].assign(store.param(i).value.v.size(), S(0));
            v_[static_cast<std::size_t>(i)].assign(store.param(i).value.v.size(), S(0));
        }
    }

    void step(ParamStore<S>& store, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (int i = 0; i < store.count(); ++i) {
            auto& p = store.param(i);
            auto& m = m_[static_cast<std::size_t>(i)];
            auto& v = v_[static_cast<std::size_t>(i)];
            for (std::size_t j = 0; j < p.value.v.size(); ++j) {
                const double g = static_cast<double>(p.grad[j]);
                m[j] = static_cast<S>(beta1_ * m[j] + (1.0 - beta1_) * g);
                v[j] = static_cast<S>(beta2_ * v[j] + (1.0 - beta2_) * g * g);
                const double mhat = static_cast<double>(m[j]) / bc1;
                const double vhat = static_cast<double>(v[j]) / bc2;
                p.value.v[j] = static_cast<S>(p.value.v[j] -
                                              lr * (mhat / (std::sqrt(vhat) + eps_) +
                                                    decay_ * static_cast<double>(p.value.v[j])));
            }
        }
    }

    int steps_taken() const { return t_; }

 private:
    double beta1_, beta2_, eps_, decay_;
    int t_ = 0;
    std::vector<std::vector<S>> m_, v_;
};

inline double cosine_lr(const RunConfig& cfg, int step) {
    if (cfg.steps <= 1) return cfg.lr;
    const double frac = static_cast<double>(step) / (cfg.steps - 1);
    return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + std::cos(M_PI * frac));
}

struct TrainResult {
    std::vector<std::string> log_lines;  // one JSON object per logged step
    int steps_run = 0;
};

// Formats one metrics line; fixed %.17g rendering keeps the logs byte-stable.
inline std::string format_metrics_line(std::uint64_t seed, int step, double lr, double total,
                                        double cls, double box, double depth, double grad_norm) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "{\"seed\":%llu,\"step\":%d,\"lr\":%.17g,\"loss_total\":%.17g,"
                  "\"loss_cls\":%.17g,\"loss_box\":%.17g,\"loss_depth\":%.17g,"
                  "\"grad_norm\":%.17g}",
                  static_cast<unsigned long long>(seed), step, lr, total, cls, box, depth,
                  grad_norm);
    return std::string(buf);
}

// One optimization step on one batch of freshly generated scenes. Feature
// maps of history frames never carry gradients (they are plain constants
// here); the per-frame fusion features are detached with the configured
// probability. Throws NumericError with a diagnostic when the loss leaves
// the finite range.
template <typename S>
LossBreakdown<S> train_step(DecoderModel<S>& model, AdamW<S>& opt, const RunConfig& cfg, int step,
                            Rng& scene_rng, Rng& detach_rng, double* grad_norm_out = nullptr) {
    model.store.zero_grad();
    LossBreakdown<S> last;
    for (int b = 0; b < cfg.batch_size; ++b) {
        const Scene scene = generate_scene(cfg, scene_rng.next_u64());
        const FeatureQueue<S> queue = render_feature_maps<S>(scene, cfg);
        DetachPlan plan;
        plan.detach_past.assign(static_cast<std::size_t>(std::max(cfg.frames - 1, 0)), 0);
        for (auto& f : plan.detach_past) f = detach_rng.bernoulli(cfg.detach_prob) ? 1 : 0;

        Tape<S> tape;
        PassContext<S> pass(tape, model.store);
        const auto outs = decoder_forward(pass, model, queue, plan);
        LossBreakdown<S> loss = total_loss(tape, outs, scene.boxes, cfg);
        if (!std::isfinite(loss.total_value)) {
            throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                               " (cls=" + std::to_string(loss.cls) + " box=" + std::to_string(loss.box) +
                               " depth=" + std::to_string(loss.depth) + ", scene seed " +
                               std::to_string(scene.seed) + ")");
        }
        tape.backward(loss.total);
        pass.accumulate_grads();
        last = std::move(loss);
    }
    if (cfg.batch_size > 1) {
        const S inv = static_cast<S>(1.0 / cfg.batch_size);
        for (int i = 0; i < model.store.count(); ++i) {
            for (auto& g : model.store.param(i).grad) g *= inv;
        }
    }
    if (grad_norm_out) *grad_norm_out = model.store.grad_norm();
    opt.step(model.store, cosine_lr(cfg, step));
    return last;
}

// Full training run: deterministic given the config (which carries the seed).
template <typename S>
TrainResult train(DecoderModel<S>& model, const RunConfig& cfg) {
    cfg.validate();
    TrainResult result;
    AdamW<S> opt(cfg, model.store);
    Rng scene_rng = Rng(cfg.seed).fork(21);
    Rng detach_rng = Rng(cfg.seed).fork(22);
    for (int step = 0; step < cfg.steps; ++step) {
        double grad_norm = 0.0;
        const auto loss = train_step(model, opt, cfg, step, scene_rng, detach_rng, &grad_norm);
        if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            result.log_lines.push_back(format_metrics_line(cfg.seed, step, cosine_lr(cfg, step),
                                                           loss.total_value, loss.cls, loss.box,
                                                           loss.depth, grad_norm));
        }
        ++result.steps_run;
    }
    return result;
}

// Held-out evaluation scene seeds, disjoint from the training stream.
inline std::uint64_t eval_scene_seed(std::uint64_t seed, int index) {
    return Rng(seed).fork(1000 + static_cast<std::uint64_t>(index)).next_u64();
}

// Runs the decoder on one scene and extracts plain-number predictions.
template <typename S>
ScenePredictions predict_scene(DecoderModel<S>& model, const Scene& scene, const RunConfig& cfg) {
    const FeatureQueue<S> queue = render_feature_maps<S>(scene, cfg);
    Tape<S> tape;
    PassContext<S> pass(tape, model.store);
    const auto outs = decoder_forward(pass, model, queue);
    ScenePredictions sp;
    sp.gts = scene.boxes;
    sp.stage_boxes.resize(outs.size());
    const int m = cfg.instances;
    for (std::size_t s = 0; s < outs.size(); ++s) {
        sp.stage_boxes[s].resize(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < geom::kAnchorDim; ++j) {
                sp.stage_boxes[s][static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                    static_cast<double>(outs[s].anchors.at({i, j}));
            }
        }
    }
    sp.boxes = sp.stage_boxes.back();
    sp.scores.resize(static_cast<std::size_t>(m));
    const auto& last = outs.back();
    for (int i = 0; i < m; ++i) {
        double best = -1e30;
        for (int j = 0; j < cfg.num_classes; ++j) {
            best = std::max(best, static_cast<double>(last.class_logits.at({i, j})));
        }
        sp.scores[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(-best));
    }
    return sp;
}

template <typename S>
EvalReport evaluate(DecoderModel<S>& model, const std::vector<Scene>& scenes, const RunConfig& cfg) {
    std::vector<ScenePredictions> preds;
    preds.reserve(scenes.size());
    for (const auto& scene : scenes) preds.push_back(predict_scene(model, scene, cfg));
    return evaluate_predictions(preds, cfg.confidence_floor);
}

}  // namespace sparseagg
