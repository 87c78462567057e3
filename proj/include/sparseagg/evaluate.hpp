#pragma once

#include <array>
#include <string>
#include <vector>

#include "sparseagg/scene.hpp"

namespace sparseagg {

// Plain-number predictions for one scene.
struct ScenePredictions {
    std::vector<std::array<double, 11>> boxes;  // final stage, one per instance
    std::vector<double> scores;                 // max class confidence per instance
    std::vector<std::vector<std::array<double, 11>>> stage_boxes;  // [stage][instance]
    std::vector<GTBox> gts;
};

struct EvalReport {
    // indexed like kEvalThresholds {0.5, 1, 2, 4} meters
    std::array<double, 4> ap{};
    std::array<double, 4> precision{};
    std::array<double, 4> recall{};
    // matched at the 2 m threshold
    double mean_center_error = 0.0;
    double mean_velocity_error = 0.0;
    int matched_2m = 0;
    // per-stage mean matched L1 over the 11-dim parameterization
    std::vector<double> stage_l1;
    int scene_count = 0;
    int gt_total = 0;

    std::string to_text() const;
    std::string to_json() const;
};

// Greedy center-distance matching of confidence-ranked predictions, pooled
// over scenes; average precision per distance threshold plus matched center
// and velocity errors and the per-stage refinement trend.
EvalReport evaluate_predictions(const std::vector<ScenePredictions>& scenes,
                                double confidence_floor);

}  // namespace sparseagg
