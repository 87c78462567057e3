#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <vector>

#include "sparseagg/common.hpp"

namespace sparseagg::geom {

// Points closer than this to the image plane count as behind the camera.
inline constexpr double kDepthEps = 1e-3;
inline constexpr int kAnchorDim = 11;

// 11-parameter anchor: position (m), log extents, yaw as (sin, cos), velocity (m/s).
// Extents map onto axes as w -> x, h -> y, l -> z in the box frame.
struct AnchorBox {
    double x = 0, y = 0, z = 0;
    double ln_w = 0, ln_h = 0, ln_l = 0;
    double sin_yaw = 0, cos_yaw = 1;
    double vx = 0, vy = 0, vz = 0;

    static AnchorBox from_array(const double* a) {
        return AnchorBox{a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8], a[9], a[10]};
    }

    void to_array(double* a) const {
        a[0] = x; a[1] = y; a[2] = z;
        a[3] = ln_w; a[4] = ln_h; a[5] = ln_l;
        a[6] = sin_yaw; a[7] = cos_yaw;
        a[8] = vx; a[9] = vy; a[10] = vz;
    }

    Eigen::Vector3d center() const { return {x, y, z}; }
    Eigen::Vector3d dims() const { return {std::exp(ln_w), std::exp(ln_h), std::exp(ln_l)}; }
    Eigen::Vector3d velocity() const { return {vx, vy, vz}; }

    // Rotation about the vertical axis built from (sin, cos) directly.
    Eigen::Matrix3d yaw_rotation() const {
        Eigen::Matrix3d r;
        r << cos_yaw, -sin_yaw, 0, sin_yaw, cos_yaw, 0, 0, 0, 1;
        return r;
    }

    void renormalize_yaw() {
        if (std::abs(sin_yaw) < 1e-8 && std::abs(cos_yaw) < 1e-8) {
            sin_yaw = 0;
            cos_yaw = 1;
            return;
        }
        const double n = std::sqrt(sin_yaw * sin_yaw + cos_yaw * cos_yaw);
        sin_yaw /= n;
        cos_yaw /= n;
    }
};

struct SE3 {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }

    SE3 inverse() const {
        SE3 inv;
        inv.rotation = rotation.transpose();
        inv.translation = -(rotation.transpose() * translation);
        return inv;
    }

    // this after other: (*this) o other
    SE3 compose(const SE3& other) const {
        SE3 out;
        out.rotation = rotation * other.rotation;
        out.translation = rotation * other.translation + translation;
        return out;
    }

    bool is_identity(double tol = 1e-9) const {
        return (rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < tol &&
               translation.cwiseAbs().maxCoeff() < tol;
    }

    static SE3 identity() { return SE3{}; }
};

// Pinhole camera. `extrinsic` maps ego coordinates of the camera's own
// timestamp into camera coordinates (x right, y down, z forward).
struct CameraModel {
    Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
    SE3 extrinsic;
    int width = 0, height = 0;
    std::vector<int> strides;

    int map_width(int scale) const { return width / strides[static_cast<std::size_t>(scale)]; }
    int map_height(int scale) const { return height / strides[static_cast<std::size_t>(scale)]; }
};

struct FrameClock {
    std::vector<double> timestamps;  // strictly increasing; back() is the current frame
    double nominal_interval = 0.5;

    int frames() const { return static_cast<int>(timestamps.size()); }

    // Seconds from frame t back to the current frame.
    double elapsed_since(int t) const { return timestamps.back() - timestamps[static_cast<std::size_t>(t)]; }

    void validate() const {
        if (timestamps.empty()) throw ContractError("clock: no timestamps");
        if (!(nominal_interval > 0)) throw ContractError("clock: nominal interval must be > 0");
        for (std::size_t i = 1; i < timestamps.size(); ++i) {
            if (!(timestamps[i] > timestamps[i - 1])) {
                throw ContractError("clock: timestamps must be strictly increasing");
            }
        }
    }
};

// Anchor center plus the six face centers, current ego frame.
inline std::array<Eigen::Vector3d, 7> fixed_keypoints(const AnchorBox& a) {
    const Eigen::Vector3d c = a.center();
    const Eigen::Vector3d d = a.dims();
    const Eigen::Matrix3d r = a.yaw_rotation();
    const Eigen::Vector3d ux = r.col(0), uy = r.col(1), uz = r.col(2);
    return {c,
            c + 0.5 * d.x() * ux, c - 0.5 * d.x() * ux,
            c + 0.5 * d.y() * uy, c - 0.5 * d.y() * uy,
            c + 0.5 * d.z() * uz, c - 0.5 * d.z() * uz};
}

// Offsets from the raw sub-network output: rotate the centered sigmoid output
// by the yaw rotation first, then scale per-axis by the extents, then translate.
inline std::vector<Eigen::Vector3d> learnable_keypoints(const AnchorBox& a, const double* raw,
                                                        int count) {
    const Eigen::Vector3d c = a.center();
    const Eigen::Vector3d d = a.dims();
    const Eigen::Matrix3d r = a.yaw_rotation();
    std::vector<Eigen::Vector3d> out(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Eigen::Vector3d o;
        for (int j = 0; j < 3; ++j) o[j] = 1.0 / (1.0 + std::exp(-raw[3 * i + j])) - 0.5;
        const Eigen::Vector3d rotated = r * o;
        out[static_cast<std::size_t>(i)] = rotated.cwiseProduct(d) + c;
    }
    return out;
}

// Constant-velocity shift backwards in time, still in current ego coordinates.
inline Eigen::Vector3d temporal_propagate(const Eigen::Vector3d& p, const Eigen::Vector3d& vel,
                                          double elapsed) {
    return p - elapsed * vel;
}

inline Eigen::Vector3d ego_transform(const Eigen::Vector3d& p, const SE3& pose) {
    return pose.apply(p);
}

// K x T sample points; points[k][t] live in the ego frame of timestamp t.
struct Keypoints4D {
    int num_points = 0;
    int num_frames = 0;
    std::vector<Eigen::Vector3d> pts;  // index (k * num_frames + t)

    Eigen::Vector3d& at(int k, int t) { return pts[static_cast<std::size_t>(k * num_frames + t)]; }
    const Eigen::Vector3d& at(int k, int t) const {
        return pts[static_cast<std::size_t>(k * num_frames + t)];
    }
};

// Current-frame points are fixed + learnable; past frames apply the constant
// velocity model followed by the ego pose for that frame. `poses[t]` maps
// current ego coordinates to the frame-t ego coordinates; the last entry must
// be the identity.
inline Keypoints4D build_keypoints4d(const AnchorBox& a, const double* raw, int learnable_count,
                                     const FrameClock& clock, const std::vector<SE3>& poses) {
    clock.validate();
    const int frames = clock.frames();
    if (static_cast<int>(poses.size()) != frames) {
        throw ContractError("keypoints: pose count does not match clock frames");
    }
    if (!poses.back().is_identity(1e-12)) {
        throw ContractError("keypoints: current-frame ego pose must be the identity");
    }
    std::vector<Eigen::Vector3d> current;
    for (const auto& p : fixed_keypoints(a)) current.push_back(p);
    if (learnable_count > 0) {
        for (const auto& p : learnable_keypoints(a, raw, learnable_count)) current.push_back(p);
    }
    Keypoints4D out;
    out.num_points = static_cast<int>(current.size());
    out.num_frames = frames;
    out.pts.resize(current.size() * static_cast<std::size_t>(frames));
    const Eigen::Vector3d vel = a.velocity();
    for (int k = 0; k < out.num_points; ++k) {
        for (int t = 0; t < frames; ++t) {
            const Eigen::Vector3d shifted =
                temporal_propagate(current[static_cast<std::size_t>(k)], vel, clock.elapsed_since(t));
            out.at(k, t) = ego_transform(shifted, poses[static_cast<std::size_t>(t)]);
        }
    }
    return out;
}

struct Projection {
    double u = 0, v = 0;
    bool valid = false;
};

// Projects a frame-t ego point onto the scale-s feature map of `cam` in
// feature-map cell units (pixel coordinates divided by the stride, cell
// centers at integer coordinates). Invalid projections are a normal outcome.
inline Projection project_point(const Eigen::Vector3d& p, const CameraModel& cam, int scale) {
    Projection out;
    const Eigen::Vector3d q = cam.extrinsic.apply(p);
    if (q.z() <= kDepthEps) return out;
    const double fx = cam.intrinsics(0, 0), fy = cam.intrinsics(1, 1);
    const double cx = cam.intrinsics(0, 2), cy = cam.intrinsics(1, 2);
    const double stride = cam.strides[static_cast<std::size_t>(scale)];
    out.u = (fx * q.x() / q.z() + cx) / stride;
    out.v = (fy * q.y() / q.z() + cy) / stride;
    out.valid = out.u >= 0 && out.u <= cam.map_width(scale) - 1 && out.v >= 0 &&
                out.v <= cam.map_height(scale) - 1;
    return out;
}

// Inverse of project_point at a known camera-frame depth; test helper for the
// round-trip property.
inline Eigen::Vector3d unproject_point(double u, double v, double depth, const CameraModel& cam,
                                       int scale) {
    const double stride = cam.strides[static_cast<std::size_t>(scale)];
    const double fx = cam.intrinsics(0, 0), fy = cam.intrinsics(1, 1);
    const double cx = cam.intrinsics(0, 2), cy = cam.intrinsics(1, 2);
    Eigen::Vector3d q;
    q.x() = (u * stride - cx) / fx * depth;
    q.y() = (v * stride - cy) / fy * depth;
    q.z() = depth;
    return cam.extrinsic.inverse().apply(q);
}

}  // namespace sparseagg::geom
