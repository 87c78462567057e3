#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "sparseagg/geometry.hpp"
#include "sparseagg/kernels.hpp"
#include "sparseagg/tape.hpp"

namespace sparseagg {

template <typename S>
struct FeatureMap {
    Tensor<S> values;  // [H, W, C]
    int stride = 1;
    int frame = 0, view = 0, scale = 0;
};

// T x N x S pyramid of feature maps plus the camera rig and ego poses needed
// to project into each timestamp. poses[t] maps current ego coordinates into
// the frame-t ego coordinates; the last entry is the identity.
template <typename S>
struct FeatureQueue {
    int frames = 0, views = 0, scales = 0, channels = 0;
    std::vector<FeatureMap<S>> maps;                      // index (t*views + n)*scales + s
    std::vector<std::vector<geom::CameraModel>> cameras;  // [t][n]
    std::vector<geom::SE3> poses;                         // [t], current -> frame t
    geom::FrameClock clock;

    int map_index(int t, int n, int s) const { return (t * views + n) * scales + s; }
    FeatureMap<S>& map(int t, int n, int s) { return maps[static_cast<std::size_t>(map_index(t, n, s))]; }
    const FeatureMap<S>& map(int t, int n, int s) const {
        return maps[static_cast<std::size_t>(map_index(t, n, s))];
    }

    void validate() const {
        if (frames < 1 || views < 1 || scales < 1) {
            throw ContractError("queue: frames/views/scales must be >= 1");
        }
        if (static_cast<int>(maps.size()) != frames * views * scales) {
            throw ContractError("queue: expected " + std::to_string(frames * views * scales) +
                                " maps, got " + std::to_string(maps.size()));
        }
        if (static_cast<int>(cameras.size()) != frames || static_cast<int>(poses.size()) != frames ||
            clock.frames() != frames) {
            throw ContractError("queue: cameras/poses/clock frame count mismatch");
        }
        clock.validate();
        if (!poses.back().is_identity(1e-9)) {
            throw ContractError("queue: current-frame ego pose must be the identity");
        }
        for (int t = 0; t < frames; ++t) {
            if (static_cast<int>(cameras[static_cast<std::size_t>(t)].size()) != views) {
                throw ContractError("queue: camera count mismatch at frame " + std::to_string(t));
            }
        }
        for (const auto& m : maps) {
            if (m.values.rank() != 3) throw ContractError("queue: maps must be rank-3 [H,W,C]");
            if (m.values.shape[0] < 2 || m.values.shape[1] < 2) {
                throw ContractError("queue: feature maps must be at least 2x2");
            }
            if (m.values.shape[2] != channels) {
                throw ContractError("queue: inconsistent channel count across maps");
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Recorded primitives
// ---------------------------------------------------------------------------

// Bilinear sample of one map at continuous cell coordinates uv = [u, v].
// Out-of-bounds neighbors contribute zero; gradients flow to the four
// neighbor cells and to the coordinates.
template <typename S>
Tensor<S> bilinear_sample(Tape<S>& tape, const Tensor<S>& map, const Tensor<S>& uv) {
    if (map.rank() != 3) throw ContractError("bilinear_sample: map must be [H,W,C]");
    if (uv.numel() != 2) throw ContractError("bilinear_sample: uv must hold 2 values");
    const int h = map.shape[0], w = map.shape[1], c = map.shape[2];
    std::vector<S> out(static_cast<std::size_t>(c));
    const unsigned char ok = 1;
    kernels::bilinear_gather(map.v.data(), h, w, c, uv.v.data(), &ok, 1, out.data());
    const int mi = tape.lift(map), ui = tape.lift(uv);
    return tape.record("bilinear_sample", {mi, ui}, {c}, std::move(out), [h, w, c](Tape<S>& tp, int id) {
        const auto& nd = tp.node(id);
        const auto& g = tp.grad(id);
        const auto& mv = tp.values(nd.inputs[0]);
        const auto& uvv = tp.values(nd.inputs[1]);
        const unsigned char one = 1;
        kernels::bilinear_scatter_map(uvv.data(), &one, g.data(), 1, h, w, c,
                                      tp.grad(nd.inputs[0]).data());
        S guv[2];
        kernels::bilinear_coord_grad(mv.data(), h, w, c, uvv.data(), &one, g.data(), 1, guv);
        auto& gu = tp.grad(nd.inputs[1]);
        gu[0] += guv[0];
        gu[1] += guv[1];
    });
}

// Current-frame keypoints for every instance: the 7 fixed points (center and
// face centers) followed by `learnable` offset points driven by phi_raw.
//   anchors [M, 11], phi_raw [M, 3*learnable] -> [M, K, 3], K = 7 + learnable
template <typename S>
Tensor<S> keypoints_current(Tape<S>& tape, const Tensor<S>& anchors, const Tensor<S>& phi_raw,
                            int learnable) {
    if (anchors.rank() != 2 || anchors.shape[1] != geom::kAnchorDim) {
        throw ContractError("keypoints: anchors must be [M,11], got " + shape_str(anchors.shape));
    }
    const int m = anchors.shape[0];
    const int k = 7 + learnable;
    if (learnable > 0 &&
        (phi_raw.rank() != 2 || phi_raw.shape[0] != m || phi_raw.shape[1] != 3 * learnable)) {
        throw ContractError("keypoints: phi output must be [M," + std::to_string(3 * learnable) +
                            "], got " + shape_str(phi_raw.shape));
    }
    std::vector<S> out(static_cast<std::size_t>(m) * k * 3);
    for (int i = 0; i < m; ++i) {
        const S* a = anchors.v.data() + static_cast<std::size_t>(i) * geom::kAnchorDim;
        const S cx = a[0], cy = a[1], cz = a[2];
        const S w = std::exp(a[3]), hh = std::exp(a[4]), l = std::exp(a[5]);
        const S sy = a[6], cyw = a[7];
        S* o = out.data() + static_cast<std::size_t>(i) * k * 3;
        auto put = [&](int kp, S px, S py, S pz) {
            o[3 * kp] = px;
            o[3 * kp + 1] = py;
            o[3 * kp + 2] = pz;
        };
        put(0, cx, cy, cz);
        put(1, cx + S(0.5) * w * cyw, cy + S(0.5) * w * sy, cz);
        put(2, cx - S(0.5) * w * cyw, cy - S(0.5) * w * sy, cz);
        put(3, cx - S(0.5) * hh * sy, cy + S(0.5) * hh * cyw, cz);
        put(4, cx + S(0.5) * hh * sy, cy - S(0.5) * hh * cyw, cz);
        put(5, cx, cy, cz + S(0.5) * l);
        put(6, cx, cy, cz - S(0.5) * l);
        for (int p = 0; p < learnable; ++p) {
            const S* raw = phi_raw.v.data() + static_cast<std::size_t>(i) * 3 * learnable + 3 * p;
            S off[3];
            for (int j = 0; j < 3; ++j) off[j] = S(1) / (S(1) + std::exp(-raw[j])) - S(0.5);
            // rotate first, then scale per-axis, then translate
            const S dx = cyw * off[0] - sy * off[1];
            const S dy = sy * off[0] + cyw * off[1];
            const S dz = off[2];
            put(7 + p, dx * w + cx, dy * hh + cy, dz * l + cz);
        }
    }
    const int ai = tape.lift(anchors), pi = tape.lift(phi_raw);
    return tape.record(
        "keypoints_current", {ai, pi}, {m, k, 3}, std::move(out),
        [m, k, learnable](Tape<S>& tp, int id) {
            const auto& nd = tp.node(id);
            const auto& g = tp.grad(id);
            const auto& av = tp.values(nd.inputs[0]);
            const auto& pv = tp.values(nd.inputs[1]);
            auto& ga = tp.grad(nd.inputs[0]);
            auto& gp = tp.grad(nd.inputs[1]);
            for (int i = 0; i < m; ++i) {
                const S* a = av.data() + static_cast<std::size_t>(i) * geom::kAnchorDim;
                const S w = std::exp(a[3]), hh = std::exp(a[4]), l = std::exp(a[5]);
                const S sy = a[6], cyw = a[7];
                S* gai = ga.data() + static_cast<std::size_t>(i) * geom::kAnchorDim;
                const S* gi = g.data() + static_cast<std::size_t>(i) * k * 3;
                auto grad_at = [&](int kp, int j) { return gi[3 * kp + j]; };
                for (int kp = 0; kp < k; ++kp) {
                    gai[0] += grad_at(kp, 0);
                    gai[1] += grad_at(kp, 1);
                    gai[2] += grad_at(kp, 2);
                }
                // face points: +-0.5 * extent * axis
                // x faces along (cos, sin, 0) scaled by w
                gai[3] += S(0.5) * w * (cyw * (grad_at(1, 0) - grad_at(2, 0)) +
                                        sy * (grad_at(1, 1) - grad_at(2, 1)));
                gai[7] += S(0.5) * w * (grad_at(1, 0) - grad_at(2, 0));
                gai[6] += S(0.5) * w * (grad_at(1, 1) - grad_at(2, 1));
                // y faces along (-sin, cos, 0) scaled by h
                gai[4] += S(0.5) * hh * (-sy * (grad_at(3, 0) - grad_at(4, 0)) +
                                         cyw * (grad_at(3, 1) - grad_at(4, 1)));
                gai[6] += S(-0.5) * hh * (grad_at(3, 0) - grad_at(4, 0));
                gai[7] += S(0.5) * hh * (grad_at(3, 1) - grad_at(4, 1));
                // z faces scaled by l
                gai[5] += S(0.5) * l * (grad_at(5, 2) - grad_at(6, 2));
                for (int p = 0; p < learnable; ++p) {
                    const S* raw = pv.data() + static_cast<std::size_t>(i) * 3 * learnable + 3 * p;
                    S sig[3], off[3];
                    for (int j = 0; j < 3; ++j) {
                        sig[j] = S(1) / (S(1) + std::exp(-raw[j]));
                        off[j] = sig[j] - S(0.5);
                    }
                    const S dx = cyw * off[0] - sy * off[1];
                    const S dy = sy * off[0] + cyw * off[1];
                    const S dz = off[2];
                    const S gx = grad_at(7 + p, 0), gy = grad_at(7 + p, 1), gz = grad_at(7 + p, 2);
                    // extents (log): p = d * extent + c
                    gai[3] += gx * dx * w;
                    gai[4] += gy * dy * hh;
                    gai[5] += gz * dz * l;
                    // rotation entries via gd = g * extent
                    const S gdx = gx * w, gdy = gy * hh, gdz = gz * l;
                    gai[7] += gdx * off[0] + gdy * off[1];
                    gai[6] += gdy * off[0] - gdx * off[1];
                    // back through the rotation to the offsets, then the sigmoid
                    const S gox = cyw * gdx + sy * gdy;
                    const S goy = -sy * gdx + cyw * gdy;
                    const S goz = gdz;
                    S* gpr = gp.data() + static_cast<std::size_t>(i) * 3 * learnable + 3 * p;
                    gpr[0] += gox * sig[0] * (S(1) - sig[0]);
                    gpr[1] += goy * sig[1] * (S(1) - sig[1]);
                    gpr[2] += goz * sig[2] * (S(1) - sig[2]);
                }
            }
        });
}

// Extends current-frame keypoints to all timestamps: constant-velocity shift
// by the anchor velocity, then the ego pose of the target frame.
//   points [M,K,3], anchors [M,11] -> [M,K,T,3]
template <typename S>
Tensor<S> propagate_keypoints(Tape<S>& tape, const Tensor<S>& points, const Tensor<S>& anchors,
                              const geom::FrameClock& clock, const std::vector<geom::SE3>& poses,
                              bool ego_compensation = true) {
    clock.validate();
    const int frames = clock.frames();
    if (static_cast<int>(poses.size()) != frames) {
        throw ContractError("propagate: pose count does not match clock frames");
    }
    if (!poses.back().is_identity(1e-9)) {
        throw ContractError("propagate: current-frame ego pose must be the identity");
    }
    if (points.rank() != 3 || points.shape[2] != 3) {
        throw ContractError("propagate: points must be [M,K,3], got " + shape_str(points.shape));
    }
    const int m = points.shape[0], k = points.shape[1];
    if (anchors.shape[0] != m) throw ContractError("propagate: anchor/point count mismatch");

    // Flattened per-frame transforms in the working precision.
    std::vector<S> rot(static_cast<std::size_t>(frames) * 9), trans(static_cast<std::size_t>(frames) * 3),
        tau(static_cast<std::size_t>(frames));
    for (int t = 0; t < frames; ++t) {
        const geom::SE3 pose = ego_compensation ? poses[static_cast<std::size_t>(t)] : geom::SE3::identity();
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) rot[static_cast<std::size_t>(t * 9 + r * 3 + c)] = static_cast<S>(pose.rotation(r, c));
            trans[static_cast<std::size_t>(t * 3 + r)] = static_cast<S>(pose.translation(r));
        }
        tau[static_cast<std::size_t>(t)] = static_cast<S>(clock.elapsed_since(t));
    }

    std::vector<S> out(static_cast<std::size_t>(m) * k * frames * 3);
    for (int i = 0; i < m; ++i) {
        const S* vel = anchors.v.data() + static_cast<std::size_t>(i) * geom::kAnchorDim + 8;
        for (int kp = 0; kp < k; ++kp) {
            const S* p = points.v.data() + (static_cast<std::size_t>(i) * k + kp) * 3;
            for (int t = 0; t < frames; ++t) {
                S shifted[3];
                for (int j = 0; j < 3; ++j) shifted[j] = p[j] - tau[static_cast<std::size_t>(t)] * vel[j];
                S* o = out.data() + ((static_cast<std::size_t>(i) * k + kp) * frames + t) * 3;
                const S* r = rot.data() + static_cast<std::size_t>(t) * 9;
                const S* tr = trans.data() + static_cast<std::size_t>(t) * 3;
                for (int row = 0; row < 3; ++row) {
                    o[row] = r[row * 3] * shifted[0] + r[row * 3 + 1] * shifted[1] +
                             r[row * 3 + 2] * shifted[2] + tr[row];
                }
            }
        }
    }
    const int pi = tape.lift(points), ai = tape.lift(anchors);
    return tape.record(
        "propagate_keypoints", {pi, ai}, {m, k, frames, 3}, std::move(out),
        [m, k, frames, rot = std::move(rot), tau = std::move(tau)](Tape<S>& tp, int id) {
            const auto& nd = tp.node(id);
            const auto& g = tp.grad(id);
            auto& gp = tp.grad(nd.inputs[0]);
            auto& ga = tp.grad(nd.inputs[1]);
            for (int i = 0; i < m; ++i) {
                S* gvel = ga.data() + static_cast<std::size_t>(i) * geom::kAnchorDim + 8;
                for (int kp = 0; kp < k; ++kp) {
                    S* gpt = gp.data() + (static_cast<std::size_t>(i) * k + kp) * 3;
                    for (int t = 0; t < frames; ++t) {
                        const S* go = g.data() + ((static_cast<std::size_t>(i) * k + kp) * frames + t) * 3;
                        const S* r = rot.data() + static_cast<std::size_t>(t) * 9;
                        // gshifted = R^T * go
                        S gs[3];
                        for (int col = 0; col < 3; ++col) {
                            gs[col] = r[col] * go[0] + r[3 + col] * go[1] + r[6 + col] * go[2];
                        }
                        for (int j = 0; j < 3; ++j) {
                            gpt[j] += gs[j];
                            gvel[j] -= tau[static_cast<std::size_t>(t)] * gs[j];
                        }
                    }
                }
            }
        });
}

// Per-sample projection data for one decoder pass.
template <typename S>
struct ProjectionSet {
    Tensor<S> uv;                      // [M,K,T,N,Sc,2]; -1 where invalid
    std::vector<unsigned char> valid;  // per (m,k,t,n,s)
};

// Projects every 4D keypoint onto every view and scale. Gradients flow to the
// points for valid projections; invalid ones are a normal outcome with zero
// gradient.
template <typename S>
ProjectionSet<S> project_keypoints(Tape<S>& tape, const Tensor<S>& points4d,
                                   const FeatureQueue<S>& queue) {
    queue.validate();
    if (points4d.rank() != 4 || points4d.shape[2] != queue.frames || points4d.shape[3] != 3) {
        throw ContractError("project: points must be [M,K,T,3] matching the queue, got " +
                            shape_str(points4d.shape));
    }
    const int m = points4d.shape[0], k = points4d.shape[1];
    const int tn = queue.frames, nn = queue.views, sn = queue.scales;

    struct Cam {
        S rot[9], trans[3], fx, fy, cx, cy;
    };
    std::vector<Cam> cams(static_cast<std::size_t>(tn) * nn);
    std::vector<S> inv_stride(static_cast<std::size_t>(sn));
    std::vector<int> mw(static_cast<std::size_t>(sn)), mh(static_cast<std::size_t>(sn));
    for (int t = 0; t < tn; ++t) {
        for (int n = 0; n < nn; ++n) {
            const auto& cm = queue.cameras[static_cast<std::size_t>(t)][static_cast<std::size_t>(n)];
            Cam& c = cams[static_cast<std::size_t>(t * nn + n)];
            for (int r = 0; r < 3; ++r) {
                for (int cc = 0; cc < 3; ++cc) c.rot[r * 3 + cc] = static_cast<S>(cm.extrinsic.rotation(r, cc));
                c.trans[r] = static_cast<S>(cm.extrinsic.translation(r));
            }
            c.fx = static_cast<S>(cm.intrinsics(0, 0));
            c.fy = static_cast<S>(cm.intrinsics(1, 1));
            c.cx = static_cast<S>(cm.intrinsics(0, 2));
            c.cy = static_cast<S>(cm.intrinsics(1, 2));
        }
    }
    const auto& cam0 = queue.cameras[0][0];
    for (int s = 0; s < sn; ++s) {
        inv_stride[static_cast<std::size_t>(s)] = S(1) / static_cast<S>(cam0.strides[static_cast<std::size_t>(s)]);
        mw[static_cast<std::size_t>(s)] = cam0.map_width(s);
        mh[static_cast<std::size_t>(s)] = cam0.map_height(s);
    }

    const std::int64_t total = static_cast<std::int64_t>(m) * k * tn * nn * sn;
    std::vector<S> uv(static_cast<std::size_t>(total) * 2, S(-1));
    std::vector<unsigned char> valid(static_cast<std::size_t>(total), 0);
    const S eps = static_cast<S>(geom::kDepthEps);
    for (int i = 0; i < m; ++i) {
        for (int kp = 0; kp < k; ++kp) {
            for (int t = 0; t < tn; ++t) {
                const S* p = points4d.v.data() + ((static_cast<std::size_t>(i) * k + kp) * tn + t) * 3;
                for (int n = 0; n < nn; ++n) {
                    const Cam& c = cams[static_cast<std::size_t>(t * nn + n)];
                    S q[3];
                    for (int row = 0; row < 3; ++row) {
                        q[row] = c.rot[row * 3] * p[0] + c.rot[row * 3 + 1] * p[1] +
                                 c.rot[row * 3 + 2] * p[2] + c.trans[row];
                    }
                    const std::int64_t base =
                        (((static_cast<std::int64_t>(i) * k + kp) * tn + t) * nn + n) * sn;
                    if (q[2] <= eps) continue;
                    const S upx = c.fx * q[0] / q[2] + c.cx;
                    const S vpx = c.fy * q[1] / q[2] + c.cy;
                    for (int s = 0; s < sn; ++s) {
                        const S u = upx * inv_stride[static_cast<std::size_t>(s)];
                        const S v = vpx * inv_stride[static_cast<std::size_t>(s)];
                        const bool ok = u >= S(0) && u <= S(mw[static_cast<std::size_t>(s)] - 1) &&
                                        v >= S(0) && v <= S(mh[static_cast<std::size_t>(s)] - 1);
                        if (!ok) continue;
                        uv[static_cast<std::size_t>(base + s) * 2] = u;
                        uv[static_cast<std::size_t>(base + s) * 2 + 1] = v;
                        valid[static_cast<std::size_t>(base + s)] = 1;
                    }
                }
            }
        }
    }

    const int pi = tape.lift(points4d);
    ProjectionSet<S> out;
    out.valid = valid;
    out.uv = tape.record(
        "project_keypoints", {pi}, {m, k, tn, nn, sn, 2}, std::move(uv),
        [m, k, tn, nn, sn, cams = std::move(cams), inv_stride = std::move(inv_stride),
         valid = std::move(valid)](Tape<S>& tp, int id) {
            const auto& nd = tp.node(id);
            const auto& g = tp.grad(id);
            const auto& pv = tp.values(nd.inputs[0]);
            auto& gp = tp.grad(nd.inputs[0]);
            for (int i = 0; i < m; ++i) {
                for (int kp = 0; kp < k; ++kp) {
                    for (int t = 0; t < tn; ++t) {
                        const std::size_t pidx = ((static_cast<std::size_t>(i) * k + kp) * tn + t) * 3;
                        const S* p = pv.data() + pidx;
                        for (int n = 0; n < nn; ++n) {
                            const auto& c = cams[static_cast<std::size_t>(t * nn + n)];
                            S q[3];
                            for (int row = 0; row < 3; ++row) {
                                q[row] = c.rot[row * 3] * p[0] + c.rot[row * 3 + 1] * p[1] +
                                         c.rot[row * 3 + 2] * p[2] + c.trans[row];
                            }
                            const std::int64_t base =
                                (((static_cast<std::int64_t>(i) * k + kp) * tn + t) * nn + n) * sn;
                            S gq0 = S(0), gq1 = S(0), gq2 = S(0);
                            bool any = false;
                            for (int s = 0; s < sn; ++s) {
                                if (!valid[static_cast<std::size_t>(base + s)]) continue;
                                const S gu = g[static_cast<std::size_t>(base + s) * 2] *
                                             inv_stride[static_cast<std::size_t>(s)];
                                const S gv = g[static_cast<std::size_t>(base + s) * 2 + 1] *
                                             inv_stride[static_cast<std::size_t>(s)];
                                if (gu == S(0) && gv == S(0)) continue;
                                any = true;
                                // u_px = fx qx/qz + cx ; v_px = fy qy/qz + cy
                                gq0 += gu * c.fx / q[2];
                                gq1 += gv * c.fy / q[2];
                                gq2 += -(gu * c.fx * q[0] + gv * c.fy * q[1]) / (q[2] * q[2]);
                            }
                            if (!any) continue;
                            for (int col = 0; col < 3; ++col) {
                                gp[pidx + static_cast<std::size_t>(col)] +=
                                    c.rot[col] * gq0 + c.rot[3 + col] * gq1 + c.rot[6 + col] * gq2;
                            }
                        }
                    }
                }
            }
        });
    return out;
}

// Samples every map at the projected keypoints.
//   uv [M,K,T,N,Sc,2] -> features [M,K,T,N,Sc,C]; masked entries are exact zeros.
template <typename S>
Tensor<S> gather_features(Tape<S>& tape, const FeatureQueue<S>& queue, const Tensor<S>& uv,
                          const std::vector<unsigned char>& valid) {
    queue.validate();
    if (uv.rank() != 6 || uv.shape[5] != 2) {
        throw ContractError("gather: uv must be [M,K,T,N,S,2], got " + shape_str(uv.shape));
    }
    const int m = uv.shape[0], k = uv.shape[1];
    const int tn = queue.frames, nn = queue.views, sn = queue.scales, c = queue.channels;
    if (uv.shape[2] != tn || uv.shape[3] != nn || uv.shape[4] != sn) {
        throw ContractError("gather: uv dims do not match the queue");
    }
    const std::int64_t points = static_cast<std::int64_t>(m) * k;
    if (static_cast<std::int64_t>(valid.size()) != points * tn * nn * sn) {
        throw ContractError("gather: validity mask size mismatch");
    }

    std::vector<int> map_nodes(static_cast<std::size_t>(tn) * nn * sn);
    std::vector<int> map_h(map_nodes.size()), map_w(map_nodes.size());
    std::vector<int> inputs;
    for (int t = 0; t < tn; ++t) {
        for (int n = 0; n < nn; ++n) {
            for (int s = 0; s < sn; ++s) {
                const auto idx = static_cast<std::size_t>(queue.map_index(t, n, s));
                map_nodes[idx] = tape.lift(queue.maps[idx].values);
                map_h[idx] = queue.maps[idx].values.shape[0];
                map_w[idx] = queue.maps[idx].values.shape[1];
                inputs.push_back(map_nodes[idx]);
            }
        }
    }
    const int uvi = tape.lift(uv);
    inputs.push_back(uvi);

    const auto fidx = [k, tn, nn, sn](std::int64_t mk, int t, int n, int s) {
        (void)k;
        return ((mk * tn + t) * nn + n) * sn + s;
    };

    std::vector<S> out(static_cast<std::size_t>(points) * tn * nn * sn * c, S(0));
    std::vector<S> uv_buf(static_cast<std::size_t>(points) * 2);
    std::vector<unsigned char> ok_buf(static_cast<std::size_t>(points));
    std::vector<S> val_buf(static_cast<std::size_t>(points) * c);
    for (int t = 0; t < tn; ++t) {
        for (int n = 0; n < nn; ++n) {
            for (int s = 0; s < sn; ++s) {
                const auto midx = static_cast<std::size_t>(queue.map_index(t, n, s));
                for (std::int64_t mk = 0; mk < points; ++mk) {
                    const std::int64_t fi = fidx(mk, t, n, s);
                    uv_buf[static_cast<std::size_t>(mk) * 2] = uv.v[static_cast<std::size_t>(fi) * 2];
                    uv_buf[static_cast<std::size_t>(mk) * 2 + 1] = uv.v[static_cast<std::size_t>(fi) * 2 + 1];
                    ok_buf[static_cast<std::size_t>(mk)] = valid[static_cast<std::size_t>(fi)];
                }
                kernels::bilinear_gather(queue.maps[midx].values.v.data(), map_h[midx], map_w[midx],
                                         c, uv_buf.data(), ok_buf.data(), static_cast<int>(points),
                                         val_buf.data());
                for (std::int64_t mk = 0; mk < points; ++mk) {
                    const std::int64_t fi = fidx(mk, t, n, s);
                    for (int ch = 0; ch < c; ++ch) {
                        out[static_cast<std::size_t>(fi * c + ch)] = val_buf[static_cast<std::size_t>(mk * c + ch)];
                    }
                }
            }
        }
    }

    return tape.record(
        "gather_features", std::move(inputs), {m, k, tn, nn, sn, c}, std::move(out),
        [points, tn, nn, sn, c, map_h, map_w, valid, fidx](Tape<S>& tp, int id) {
            const auto& nd = tp.node(id);
            const auto& g = tp.grad(id);
            const int uv_node = nd.inputs.back();
            const auto& uvv = tp.values(uv_node);
            auto& guv = tp.grad(uv_node);
            std::vector<S> uv_buf(static_cast<std::size_t>(points) * 2);
            std::vector<unsigned char> ok_buf(static_cast<std::size_t>(points));
            std::vector<S> g_buf(static_cast<std::size_t>(points) * c);
            std::vector<S> guv_buf(static_cast<std::size_t>(points) * 2);
            for (int t = 0; t < tn; ++t) {
                for (int n = 0; n < nn; ++n) {
                    for (int s = 0; s < sn; ++s) {
                        const std::size_t midx = static_cast<std::size_t>((t * nn + n) * sn + s);
                        const int map_node = nd.inputs[midx];
                        for (std::int64_t mk = 0; mk < points; ++mk) {
                            const std::int64_t fi = fidx(mk, t, n, s);
                            uv_buf[static_cast<std::size_t>(mk) * 2] = uvv[static_cast<std::size_t>(fi) * 2];
                            uv_buf[static_cast<std::size_t>(mk) * 2 + 1] = uvv[static_cast<std::size_t>(fi) * 2 + 1];
                            ok_buf[static_cast<std::size_t>(mk)] = valid[static_cast<std::size_t>(fi)];
                            for (int ch = 0; ch < c; ++ch) {
                                g_buf[static_cast<std::size_t>(mk * c + ch)] = g[static_cast<std::size_t>(fi * c + ch)];
                            }
                        }
                        kernels::bilinear_scatter_map(uv_buf.data(), ok_buf.data(), g_buf.data(),
                                                      static_cast<int>(points), map_h[midx],
                                                      map_w[midx], c, tp.grad(map_node).data());
                        kernels::bilinear_coord_grad(tp.values(map_node).data(), map_h[midx],
                                                     map_w[midx], c, uv_buf.data(), ok_buf.data(),
                                                     g_buf.data(), static_cast<int>(points),
                                                     guv_buf.data());
                        for (std::int64_t mk = 0; mk < points; ++mk) {
                            const std::int64_t fi = fidx(mk, t, n, s);
                            guv[static_cast<std::size_t>(fi) * 2] += guv_buf[static_cast<std::size_t>(mk) * 2];
                            guv[static_cast<std::size_t>(fi) * 2 + 1] += guv_buf[static_cast<std::size_t>(mk) * 2 + 1];
                        }
                    }
                }
            }
        });
}

// Full sparse sampling step: project and gather in one call. Returns the
// sampled features plus the per-(instance, point, frame, view) visibility
// mask (a point is visible in a view when any scale accepts it).
template <typename S>
struct SampledFeatures {
    Tensor<S> features;                // [M,K,T,N,Sc,C]
    Tensor<S> uv;                      // [M,K,T,N,Sc,2]
    std::vector<unsigned char> valid;  // per (m,k,t,n,s)
    std::vector<unsigned char> view_mask;  // per (m,k,t,n)
};

template <typename S>
SampledFeatures<S> sample_features(Tape<S>& tape, const Tensor<S>& points4d,
                                   const FeatureQueue<S>& queue) {
    SampledFeatures<S> out;
    ProjectionSet<S> proj = project_keypoints(tape, points4d, queue);
    out.features = gather_features(tape, queue, proj.uv, proj.valid);
    out.uv = proj.uv;
    out.valid = std::move(proj.valid);
    const std::size_t groups = out.valid.size() / static_cast<std::size_t>(queue.scales);
    out.view_mask.assign(groups, 0);
    for (std::size_t i = 0; i < groups; ++i) {
        for (int s = 0; s < queue.scales; ++s) {
            if (out.valid[i * static_cast<std::size_t>(queue.scales) + static_cast<std::size_t>(s)]) {
                out.view_mask[i] = 1;
                break;
            }
        }
    }
    return out;
}

}  // namespace sparseagg
