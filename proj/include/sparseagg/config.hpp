#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sparseagg {

// Fixed keypoints: anchor center plus the six face centers.
inline constexpr int kFixedKeypoints = 7;

// Detection thresholds (meters) used by the evaluation report.
inline constexpr double kEvalThresholds[4] = {0.5, 1.0, 2.0, 4.0};

// Every run is driven by one of these. Defaults follow the structural
// hyperparameters of the reference setup (7 fixed + 6 learnable keypoints,
// 4 scales, 6 refinement stages, 900 instances); desk-scale configs override
// the sizes. Serialized as TOML-style sections, see configs/ for examples.
struct RunConfig {
    // [model]
    int channels = 256;
    int groups = 8;
    int learnable_points = 6;
    int depth_bins = 64;
    int stages = 6;
    int attn_heads = 1;
    int instances = 900;
    int num_classes = 10;
    std::string weight_norm = "softmax";  // softmax | sigmoid
    bool classify_every_stage = true;
    double depth_min = 1.0;
    double depth_max = 60.0;
    double pos_norm = 50.0;  // spatial normalizer for anchor embeddings

    // [scene]
    int frames = 4;
    int cameras = 6;
    int scales = 4;
    double frame_interval = 0.5;
    int image_width = 320;
    int image_height = 192;
    std::vector<int> strides = {4, 8, 16, 32};
    int boxes_min = 4;
    int boxes_max = 12;
    double range_xy = 24.0;
    double z_min = 0.4;
    double z_max = 1.2;
    double dim_min = 1.2;
    double dim_max = 4.0;
    double speed_max = 3.0;
    double ego_speed = 5.0;
    double ego_yaw_rate = 0.05;
    double fov_deg = 90.0;
    double min_range = 4.0;
    double sentinel_depth = 300.0;
    bool spawn_visible_only = true;
    bool ego_compensation = true;

    // [train]
    int steps = 2000;
    int batch_size = 1;
    double lr = 2e-4;
    double lr_min = 0.0;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double detach_prob = 0.5;
    std::uint64_t seed = 1;
    int log_every = 10;

    // [loss]
    double lambda_cls = 2.0;
    double lambda_box = 0.25;
    double lambda_depth = 0.2;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
    double match_w_cls = 1.0;
    double match_w_box = 1.0;

    // [eval]
    double confidence_floor = 0.05;

    int total_points() const { return kFixedKeypoints + learnable_points; }

    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::string& path);
    std::string serialize() const;
    void save(const std::string& path) const;

    // Throws ConfigError naming the offending field.
    void validate() const;
};

}  // namespace sparseagg
