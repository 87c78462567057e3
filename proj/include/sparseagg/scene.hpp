#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sparseagg/config.hpp"
#include "sparseagg/geometry.hpp"
#include "sparseagg/rng.hpp"
#include "sparseagg/sampling.hpp"

namespace sparseagg {

struct GTBox {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();    // current ego frame, meters
    Eigen::Vector3d dims = Eigen::Vector3d::Ones();      // extents along box x/y/z
    double yaw = 0.0;
    Eigen::Vector3d velocity = Eigen::Vector3d::Zero();  // m/s
    int class_id = 0;

    geom::AnchorBox as_anchor() const {
        geom::AnchorBox a;
        a.x = center.x();
        a.y = center.y();
        a.z = center.z();
        a.ln_w = std::log(dims.x());
        a.ln_h = std::log(dims.y());
        a.ln_l = std::log(dims.z());
        a.sin_yaw = std::sin(yaw);
        a.cos_yaw = std::cos(yaw);
        a.vx = velocity.x();
        a.vy = velocity.y();
        a.vz = velocity.z();
        return a;
    }
};

// One synthetic clip: ground-truth boxes in the current ego frame, a fixed
// camera ring, an ego trajectory and the frame clock. Everything downstream
// is a deterministic function of this struct.
struct Scene {
    std::uint64_t seed = 0;
    geom::FrameClock clock;
    std::vector<geom::CameraModel> rig;  // same rig at every timestamp
    std::vector<geom::SE3> ego_poses;    // [t], current ego -> frame-t ego
    std::vector<GTBox> boxes;
};

// Ray/oriented-box intersection; returns the distance along the unit ray to
// the nearest surface, or a negative value on miss.
inline double ray_box_distance(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                               const Eigen::Vector3d& box_center, const Eigen::Matrix3d& box_rot,
                               const Eigen::Vector3d& half_extents) {
    const Eigen::Vector3d o = box_rot.transpose() * (origin - box_center);
    const Eigen::Vector3d d = box_rot.transpose() * dir;
    double tmin = -1e30, tmax = 1e30;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-12) {
            if (std::abs(o[a]) > half_extents[a]) return -1.0;
            continue;
        }
        double t1 = (-half_extents[a] - o[a]) / d[a];
        double t2 = (half_extents[a] - o[a]) / d[a];
        if (t1 > t2) std::swap(t1, t2);
        tmin = std::max(tmin, t1);
        tmax = std::min(tmax, t2);
    }
    if (tmax < tmin) return -1.0;
    if (tmin > 1e-6) return tmin;
    if (tmax > 1e-6) return tmax;  // ray starts inside the box
    return -1.0;
}

namespace detail {

inline Eigen::Matrix3d yaw_rotation(double yaw) {
    Eigen::Matrix3d r;
    r << std::cos(yaw), -std::sin(yaw), 0, std::sin(yaw), std::cos(yaw), 0, 0, 0, 1;
    return r;
}

// Outward-facing pinhole ring at the ego origin.
inline std::vector<geom::CameraModel> camera_ring(const RunConfig& cfg) {
    std::vector<geom::CameraModel> rig;
    const double fx = 0.5 * cfg.image_width / std::tan(0.5 * cfg.fov_deg * M_PI / 180.0);
    for (int n = 0; n < cfg.cameras; ++n) {
        const double theta = 2.0 * M_PI * n / cfg.cameras;
        const Eigen::Vector3d forward(std::cos(theta), std::sin(theta), 0.0);
        const Eigen::Vector3d right(std::sin(theta), -std::cos(theta), 0.0);
        const Eigen::Vector3d down(0.0, 0.0, -1.0);
        const Eigen::Vector3d center(0.0, 0.0, 1.6);
        geom::CameraModel cam;
        cam.intrinsics << fx, 0, 0.5 * cfg.image_width, 0, fx, 0.5 * cfg.image_height, 0, 0, 1;
        cam.extrinsic.rotation.row(0) = right;
        cam.extrinsic.rotation.row(1) = down;
        cam.extrinsic.rotation.row(2) = forward;
        cam.extrinsic.translation = -(cam.extrinsic.rotation * center);
        cam.width = cfg.image_width;
        cam.height = cfg.image_height;
        cam.strides = cfg.strides;
        rig.push_back(cam);
    }
    return rig;
}

// Ego state at clip time tau (tau <= 0 for history; identity at tau = 0):
// constant speed along the heading with a constant yaw rate.
inline geom::SE3 ego_world_pose(double tau, double speed, double yaw_rate) {
    geom::SE3 pose;
    const double yaw = yaw_rate * tau;
    pose.rotation = yaw_rotation(yaw);
    if (std::abs(yaw_rate) < 1e-9) {
        pose.translation = Eigen::Vector3d(speed * tau, 0.0, 0.0);
    } else {
        pose.translation =
            Eigen::Vector3d(speed / yaw_rate * std::sin(yaw), speed / yaw_rate * (1.0 - std::cos(yaw)), 0.0);
    }
    return pose;
}

}  // namespace detail

// Deterministic per seed. Box draws, clock draws and render signatures use
// independent substreams so the current-frame content does not depend on the
// number of history frames.
inline Scene generate_scene(const RunConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Scene scene;
    scene.seed = seed;
    scene.rig = detail::camera_ring(cfg);

    Rng root(seed);
    Rng clock_rng = root.fork(2);
    scene.clock.nominal_interval = cfg.frame_interval;
    scene.clock.timestamps.assign(static_cast<std::size_t>(cfg.frames), 0.0);
    // Gaps sampled from {d_t, 2 d_t}, current frame at time zero.
    for (int t = cfg.frames - 2; t >= 0; --t) {
        const double gap = clock_rng.bernoulli(0.5) ? cfg.frame_interval : 2.0 * cfg.frame_interval;
        scene.clock.timestamps[static_cast<std::size_t>(t)] =
            scene.clock.timestamps[static_cast<std::size_t>(t + 1)] - gap;
    }

    for (int t = 0; t < cfg.frames; ++t) {
        const geom::SE3 world =
            detail::ego_world_pose(scene.clock.timestamps[static_cast<std::size_t>(t)], cfg.ego_speed,
                                   cfg.ego_yaw_rate);
        scene.ego_poses.push_back(world.inverse());  // world == current ego frame
    }

    Rng box_rng = root.fork(1);
    const int count = box_rng.uniform_int(cfg.boxes_min, cfg.boxes_max);
    for (int b = 0; b < count; ++b) {
        GTBox box;
        bool placed = false;
        for (int attempt = 0; attempt < 256 && !placed; ++attempt) {
            box.center.x() = box_rng.uniform(-cfg.range_xy, cfg.range_xy);
            box.center.y() = box_rng.uniform(-cfg.range_xy, cfg.range_xy);
            box.center.z() = box_rng.uniform(cfg.z_min, cfg.z_max);
            if (!cfg.spawn_visible_only) {
                placed = true;
                break;
            }
            if (box.center.head<2>().norm() < cfg.min_range) continue;
            for (const auto& cam : scene.rig) {
                if (geom::project_point(box.center, cam, 0).valid) {
                    placed = true;
                    break;
                }
            }
        }
        if (!placed) {
            throw ConfigError("scene: cannot place a visible box; widen scene.range_xy or the rig");
        }
        for (int a = 0; a < 3; ++a) box.dims[a] = box_rng.uniform(cfg.dim_min, cfg.dim_max);
        box.yaw = box_rng.uniform(-M_PI, M_PI);
        box.velocity.x() = box_rng.uniform(-cfg.speed_max, cfg.speed_max);
        box.velocity.y() = box_rng.uniform(-cfg.speed_max, cfg.speed_max);
        box.velocity.z() = 0.0;
        box.class_id = box_rng.uniform_int(0, cfg.num_classes - 1);
        scene.boxes.push_back(box);
    }
    return scene;
}

// Per-scene-fixed random signature vectors, one per box.
inline std::vector<std::vector<double>> box_signatures(const Scene& scene, int width) {
    Rng rng = Rng(scene.seed).fork(3);
    std::vector<std::vector<double>> sig(scene.boxes.size());
    for (auto& s : sig) {
        s.resize(static_cast<std::size_t>(width));
        for (auto& v : s) v = rng.uniform(-1.0, 1.0);
    }
    return sig;
}

// Oracle feature renderer standing in for an image backbone. Each cell casts
// its center ray and stores:
//   [0,       C/4)  sinusoidal encodings of the camera-frame ray direction
//   [C/4,     C/2)  sinusoidal encodings of the hit distance (sentinel on miss)
//   [C/2,     C)    the hit box's per-scene random signature, zeros on miss
template <typename S>
FeatureQueue<S> render_feature_maps(const Scene& scene, const RunConfig& cfg) {
    FeatureQueue<S> queue;
    queue.frames = scene.clock.frames();
    queue.views = static_cast<int>(scene.rig.size());
    queue.scales = static_cast<int>(cfg.strides.size());
    queue.channels = cfg.channels;
    queue.clock = scene.clock;
    queue.poses = scene.ego_poses;
    queue.cameras.assign(static_cast<std::size_t>(queue.frames), scene.rig);

    const int c = cfg.channels;
    const int c_dir = c / 4, c_depth = c / 4, c_sig = c / 2;
    const auto signatures = box_signatures(scene, c_sig);

    queue.maps.resize(static_cast<std::size_t>(queue.frames) * queue.views * queue.scales);
    for (int t = 0; t < queue.frames; ++t) {
        const geom::SE3& pose = scene.ego_poses[static_cast<std::size_t>(t)];
        const double elapsed = scene.clock.elapsed_since(t);
        // Boxes at frame t, in the frame-t ego coordinates.
        std::vector<Eigen::Vector3d> centers(scene.boxes.size());
        std::vector<Eigen::Matrix3d> rots(scene.boxes.size());
        std::vector<Eigen::Vector3d> halves(scene.boxes.size());
        for (std::size_t b = 0; b < scene.boxes.size(); ++b) {
            const GTBox& box = scene.boxes[b];
            centers[b] = pose.apply(box.center - elapsed * box.velocity);
            rots[b] = pose.rotation * detail::yaw_rotation(box.yaw);
            halves[b] = 0.5 * box.dims;
        }
        for (int n = 0; n < queue.views; ++n) {
            const geom::CameraModel& cam = scene.rig[static_cast<std::size_t>(n)];
            const Eigen::Vector3d origin = cam.extrinsic.inverse().apply(Eigen::Vector3d::Zero());
            const Eigen::Matrix3d rot_t = cam.extrinsic.rotation.transpose();
            const double fx = cam.intrinsics(0, 0), fy = cam.intrinsics(1, 1);
            const double cx = cam.intrinsics(0, 2), cy = cam.intrinsics(1, 2);
            for (int s = 0; s < queue.scales; ++s) {
                const int stride = cfg.strides[static_cast<std::size_t>(s)];
                const int mh = cfg.image_height / stride, mw = cfg.image_width / stride;
                FeatureMap<S>& fm = queue.map(t, n, s);
                fm.values = Tensor<S>({mh, mw, c});
                fm.stride = stride;
                fm.frame = t;
                fm.view = n;
                fm.scale = s;
                S* data = fm.values.v.data();
                const int box_count = static_cast<int>(scene.boxes.size());
                SPARSEAGG_PARALLEL_FOR
                for (int cell = 0; cell < mh * mw; ++cell) {
                    const int i = cell / mw, j = cell % mw;
                    Eigen::Vector3d dcam((j * stride - cx) / fx, (i * stride - cy) / fy, 1.0);
                    dcam.normalize();
                    const Eigen::Vector3d dir = rot_t * dcam;
                    double best = -1.0;
                    int hit = -1;
                    for (int b = 0; b < box_count; ++b) {
                        const double dist = ray_box_distance(origin, dir, centers[static_cast<std::size_t>(b)],
                                                             rots[static_cast<std::size_t>(b)],
                                                             halves[static_cast<std::size_t>(b)]);
                        if (dist > 0 && (hit < 0 || dist < best)) {
                            best = dist;
                            hit = b;
                        }
                    }
                    S* cellp = data + static_cast<std::size_t>(cell) * c;
                    double freq = 3.0;
                    for (int q = 0; q + 3 < c_dir; q += 4) {
                        cellp[q] = static_cast<S>(std::sin(freq * dcam.x()));
                        cellp[q + 1] = static_cast<S>(std::cos(freq * dcam.x()));
                        cellp[q + 2] = static_cast<S>(std::sin(freq * dcam.y()));
                        cellp[q + 3] = static_cast<S>(std::cos(freq * dcam.y()));
                        freq *= 4.0;
                    }
                    const double depth = hit >= 0 ? best : cfg.sentinel_depth;
                    double wavelength = 2.0 * cfg.depth_max;
                    for (int q = 0; q + 1 < c_depth; q += 2) {
                        const double phase = 2.0 * M_PI * depth / wavelength;
                        cellp[c_dir + q] = static_cast<S>(std::sin(phase));
                        cellp[c_dir + q + 1] = static_cast<S>(std::cos(phase));
                        wavelength *= 0.25;
                    }
                    for (int q = 0; q < c_sig; ++q) {
                        cellp[c_dir + c_depth + q] =
                            hit >= 0 ? static_cast<S>(signatures[static_cast<std::size_t>(hit)][static_cast<std::size_t>(q)])
                                     : S(0);
                    }
                }
            }
        }
    }
    return queue;
}

}  // namespace sparseagg
