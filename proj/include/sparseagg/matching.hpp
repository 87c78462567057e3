#pragma once

#include <utility>
#include <vector>

namespace sparseagg {

// One-to-one assignment between predictions and ground truth.
struct Assignment {
    std::vector<std::pair<int, int>> pairs;  // (prediction index, ground-truth index)
    double total_cost = 0.0;
};

// Minimum-total-cost assignment covering every ground-truth entry.
// cost is row-major [num_predictions x num_gt]; requires num_gt <= num_predictions
// and finite costs. Deterministic.
Assignment hungarian_match(const std::vector<double>& cost, int num_predictions, int num_gt);

}  // namespace sparseagg
