#include "sparseagg/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "sparseagg/config.hpp"
#include "sparseagg/matching.hpp"

namespace sparseagg {

namespace {

struct RankedPrediction {
    double score;
    int scene;
    int index;
};

double center_distance(const std::array<double, 11>& box, const GTBox& gt) {
    const double dx = box[0] - gt.center.x();
    const double dy = box[1] - gt.center.y();
    const double dz = box[2] - gt.center.z();
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

EvalReport evaluate_predictions(const std::vector<ScenePredictions>& scenes,
                                double confidence_floor) {
    EvalReport report;
    report.scene_count = static_cast<int>(scenes.size());
    for (const auto& s : scenes) report.gt_total += static_cast<int>(s.gts.size());

    std::vector<RankedPrediction> ranked;
    for (int sc = 0; sc < static_cast<int>(scenes.size()); ++sc) {
        const auto& s = scenes[static_cast<std::size_t>(sc)];
        for (int i = 0; i < static_cast<int>(s.boxes.size()); ++i) {
            if (s.scores[static_cast<std::size_t>(i)] < confidence_floor) continue;
            ranked.push_back({s.scores[static_cast<std::size_t>(i)], sc, i});
        }
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.scene != b.scene) return a.scene < b.scene;
        return a.index < b.index;
    });

    for (int th = 0; th < 4; ++th) {
        const double threshold = kEvalThresholds[th];
        std::vector<std::vector<char>> taken(scenes.size());
        for (std::size_t sc = 0; sc < scenes.size(); ++sc) taken[sc].assign(scenes[sc].gts.size(), 0);
        int tp = 0;
        double ap = 0.0;
        double center_acc = 0.0, vel_acc = 0.0;
        int rank = 0;
        for (const auto& rp : ranked) {
            ++rank;
            const auto& s = scenes[static_cast<std::size_t>(rp.scene)];
            const auto& box = s.boxes[static_cast<std::size_t>(rp.index)];
            int best_gt = -1;
            double best_dist = threshold;
            for (int g = 0; g < static_cast<int>(s.gts.size()); ++g) {
                if (taken[static_cast<std::size_t>(rp.scene)][static_cast<std::size_t>(g)]) continue;
                const double d = center_distance(box, s.gts[static_cast<std::size_t>(g)]);
                if (d <= best_dist) {
                    best_dist = d;
                    best_gt = g;
                }
            }
            if (best_gt >= 0) {
                taken[static_cast<std::size_t>(rp.scene)][static_cast<std::size_t>(best_gt)] = 1;
                ++tp;
                // area under the precision-recall steps
                if (report.gt_total > 0) ap += static_cast<double>(tp) / rank / report.gt_total;
                if (th == 2) {
                    const auto& gt = s.gts[static_cast<std::size_t>(best_gt)];
                    center_acc += best_dist;
                    const double dvx = box[8] - gt.velocity.x();
                    const double dvy = box[9] - gt.velocity.y();
                    const double dvz = box[10] - gt.velocity.z();
                    vel_acc += std::sqrt(dvx * dvx + dvy * dvy + dvz * dvz);
                }
            }
        }
        report.ap[static_cast<std::size_t>(th)] = ap;
        report.precision[static_cast<std::size_t>(th)] =
            ranked.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(ranked.size());
        report.recall[static_cast<std::size_t>(th)] =
            report.gt_total == 0 ? 0.0 : static_cast<double>(tp) / report.gt_total;
        if (th == 2) {
            report.matched_2m = tp;
            report.mean_center_error = tp > 0 ? center_acc / tp : 0.0;
            report.mean_velocity_error = tp > 0 ? vel_acc / tp : 0.0;
        }
    }

    // Per-stage refinement trend: every ground truth is matched by center
    // distance (no threshold), then the full 11-dim L1 is averaged.
    std::size_t stages = 0;
    for (const auto& s : scenes) stages = std::max(stages, s.stage_boxes.size());
    report.stage_l1.assign(stages, 0.0);
    std::vector<int> stage_matches(stages, 0);
    for (const auto& s : scenes) {
        if (s.gts.empty()) continue;
        for (std::size_t st = 0; st < s.stage_boxes.size(); ++st) {
            const auto& boxes = s.stage_boxes[st];
            const int m = static_cast<int>(boxes.size());
            const int gt_count = static_cast<int>(s.gts.size());
            std::vector<double> cost(static_cast<std::size_t>(m) * static_cast<std::size_t>(gt_count));
            for (int i = 0; i < m; ++i) {
                for (int g = 0; g < gt_count; ++g) {
                    cost[static_cast<std::size_t>(i) * gt_count + static_cast<std::size_t>(g)] =
                        center_distance(boxes[static_cast<std::size_t>(i)], s.gts[static_cast<std::size_t>(g)]);
                }
            }
            const Assignment assign = hungarian_match(cost, m, gt_count);
            for (const auto& [pred, gt] : assign.pairs) {
                std::array<double, 11> t{};
                s.gts[static_cast<std::size_t>(gt)].as_anchor().to_array(t.data());
                double l1 = 0.0;
                for (int j = 0; j < 11; ++j) {
                    l1 += std::abs(boxes[static_cast<std::size_t>(pred)][static_cast<std::size_t>(j)] - t[static_cast<std::size_t>(j)]);
                }
                report.stage_l1[st] += l1 / 11.0;
                ++stage_matches[st];
            }
        }
    }
    for (std::size_t st = 0; st < stages; ++st) {
        if (stage_matches[st] > 0) report.stage_l1[st] /= stage_matches[st];
    }
    return report;
}

std::string EvalReport::to_text() const {
    std::ostringstream os;
    char buf[160];
    os << "threshold   AP      precision  recall\n";
    for (int th = 0; th < 4; ++th) {
        std::snprintf(buf, sizeof(buf), "%5.1f m   %6.4f   %6.4f    %6.4f\n", kEvalThresholds[th],
                      ap[static_cast<std::size_t>(th)], precision[static_cast<std::size_t>(th)],
                      recall[static_cast<std::size_t>(th)]);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "matched@2m %d/%d  center err %.4f m  velocity err %.4f m/s\n", matched_2m,
                  gt_total, mean_center_error, mean_velocity_error);
    os << buf;
    os << "stage L1:";
    for (const double v : stage_l1) {
        std::snprintf(buf, sizeof(buf), " %.4f", v);
        os << buf;
    }
    os << "\n";
    return os.str();
}

std::string EvalReport::to_json() const {
    std::ostringstream os;
    os.precision(17);
    os << "{\"ap\":[" << ap[0] << "," << ap[1] << "," << ap[2] << "," << ap[3] << "]";
    os << ",\"precision\":[" << precision[0] << "," << precision[1] << "," << precision[2] << ","
       << precision[3] << "]";
    os << ",\"recall\":[" << recall[0] << "," << recall[1] << "," << recall[2] << "," << recall[3]
       << "]";
    os << ",\"mean_center_error\":" << mean_center_error;
    os << ",\"mean_velocity_error\":" << mean_velocity_error;
    os << ",\"matched_2m\":" << matched_2m;
    os << ",\"stage_l1\":[";
    for (std::size_t i = 0; i < stage_l1.size(); ++i) {
        if (i) os << ",";
        os << stage_l1[i];
    }
    os << "],\"scene_count\":" << scene_count << ",\"gt_total\":" << gt_total << "}";
    return os.str();
}

}  // namespace sparseagg
