#include "sparseagg/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sparseagg/common.hpp"

namespace sparseagg {

// Potential-based Hungarian algorithm on the transposed (ground truth = rows)
// problem, O(Gt^2 * M).
Assignment hungarian_match(const std::vector<double>& cost, int num_predictions, int num_gt) {
    if (num_gt > num_predictions) {
        throw ContractError("hungarian: ground-truth count " + std::to_string(num_gt) +
                            " exceeds prediction count " + std::to_string(num_predictions));
    }
    if (static_cast<std::size_t>(num_predictions) * static_cast<std::size_t>(num_gt) != cost.size()) {
        throw ContractError("hungarian: cost matrix size mismatch");
    }
    for (const double c : cost) {
        if (!std::isfinite(c)) throw ContractError("hungarian: costs must be finite");
    }

    Assignment out;
    if (num_gt == 0) return out;

    const int rows = num_gt, cols = num_predictions;
    const double inf = std::numeric_limits<double>::infinity();
    // 1-based arrays; row_of[j] is the row currently assigned to column j.
    std::vector<double> u(static_cast<std::size_t>(rows) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(cols) + 1, 0.0);
    std::vector<int> row_of(static_cast<std::size_t>(cols) + 1, 0);
    std::vector<int> way(static_cast<std::size_t>(cols) + 1, 0);
    const auto at = [&](int gt, int pred) {
        return cost[static_cast<std::size_t>(pred) * static_cast<std::size_t>(num_gt) +
                    static_cast<std::size_t>(gt)];
    };

    for (int i = 1; i <= rows; ++i) {
        row_of[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(cols) + 1, inf);
        std::vector<char> used(static_cast<std::size_t>(cols) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = row_of[static_cast<std::size_t>(j0)];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= cols; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = at(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                                   v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= cols; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(row_of[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (row_of[static_cast<std::size_t>(j0)] != 0);
        // Augment along the found path.
        while (j0 != 0) {
            const int j1 = way[static_cast<std::size_t>(j0)];
            row_of[static_cast<std::size_t>(j0)] = row_of[static_cast<std::size_t>(j1)];
            j0 = j1;
        }
    }

    out.pairs.reserve(static_cast<std::size_t>(rows));
    for (int j = 1; j <= cols; ++j) {
        if (row_of[static_cast<std::size_t>(j)] != 0) {
            const int gt = row_of[static_cast<std::size_t>(j)] - 1;
            const int pred = j - 1;
            out.pairs.emplace_back(pred, gt);
            out.total_cost += at(gt, pred);
        }
    }
    std::sort(out.pairs.begin(), out.pairs.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    return out;
}

}  // namespace sparseagg
