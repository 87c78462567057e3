#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sparseagg/common.hpp"
#include "sparseagg/kernels.hpp"
#include "sparseagg/tensor.hpp"

namespace sparseagg {

// Reverse-mode differentiation tape. Every primitive appends one node in
// execution order (inputs always precede their consumers), so backward() is a
// single reverse sweep that visits each node at most once. All reductions run
// in a fixed left-to-right order; replaying a graph is bit-identical.
template <typename S>
class Tape {
 public:
    struct Node {
        const char* op;
        std::vector<int> inputs;
        std::vector<int> shape;
        std::vector<S> values;
        std::function<void(Tape&, int)> backprop;  // null for leaves
    };

    // Registers a differentiable leaf and returns a handle bound to this tape.
    Tensor<S> input(const Tensor<S>& t) {
        Tensor<S> out = t;
        out.node = push_leaf("input", t);
        return out;
    }

    // Node id of `t`, materializing constants as leaf nodes.
    int lift(const Tensor<S>& t) {
        if (t.node >= 0) {
            if (t.node >= static_cast<int>(nodes_.size())) {
                throw ContractError("tape: tensor references node " + std::to_string(t.node) +
                                    " beyond graph size " + std::to_string(nodes_.size()));
            }
            return t.node;
        }
        return push_leaf("const", t);
    }

    int size() const { return static_cast<int>(nodes_.size()); }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    const std::vector<S>& values(int id) const { return nodes_[static_cast<std::size_t>(id)].values; }
    const std::vector<int>& shape_of(int id) const { return nodes_[static_cast<std::size_t>(id)].shape; }

    bool has_grad(int id) const {
        return id >= 0 && id < static_cast<int>(grads_.size()) &&
               !grads_[static_cast<std::size_t>(id)].empty();
    }

    // Gradient buffer for a node, zero-initialized on first touch.
    std::vector<S>& grad(int id) {
        auto& g = grads_[static_cast<std::size_t>(id)];
        if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(id)].values.size(), S(0));
        return g;
    }

    Tensor<S> record(const char* op, std::vector<int> inputs, std::vector<int> shape,
                     std::vector<S> values, std::function<void(Tape&, int)> backprop) {
        const int id = static_cast<int>(nodes_.size());
        Tensor<S> out(shape, values);
        out.node = id;
        nodes_.push_back(Node{op, std::move(inputs), std::move(shape), std::move(values),
                              std::move(backprop)});
        return out;
    }

    // ------------------------------------------------------------------
    // Primitive set
    // ------------------------------------------------------------------

    // out[b,j] = sum_i x[b,i] * w[i,j] + b[j]
    Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
        if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.shape[1] != w.shape[0] ||
            w.shape[1] != b.shape[0]) {
            throw ContractError("linear: incompatible shapes x=" + shape_str(x.shape) +
                                " w=" + shape_str(w.shape) + " b=" + shape_str(b.shape));
        }
        const int rows = x.shape[0], cin = x.shape[1], cout = w.shape[1];
        std::vector<S> out(static_cast<std::size_t>(rows) * cout);
        kernels::matmul(x.v.data(), w.v.data(), out.data(), rows, cin, cout);
        kernels::add_bias_rows(out.data(), b.v.data(), rows, cout);
        const int xi = lift(x), wi = lift(w), bi = lift(b);
        return record("linear", {xi, wi, bi}, {rows, cout}, std::move(out),
                      [rows, cin, cout](Tape& tp, int id) {
                          const auto& nd = tp.node(id);
                          const auto& g = tp.grad(id);
                          const auto& xv = tp.values(nd.inputs[0]);
                          const auto& wv = tp.values(nd.inputs[1]);
                          std::vector<S> tmp(std::max(xv.size(), wv.size()));
                          kernels::matmul_nt(g.data(), wv.data(), tmp.data(), rows, cout, cin);
                          axpy(tp.grad(nd.inputs[0]), tmp.data(), static_cast<std::int64_t>(rows) * cin);
                          kernels::matmul_tn(xv.data(), g.data(), tmp.data(), rows, cin, cout);
                          axpy(tp.grad(nd.inputs[1]), tmp.data(), static_cast<std::int64_t>(cin) * cout);
                          auto& gb = tp.grad(nd.inputs[2]);
                          for (int i = 0; i < rows; ++i)
                              for (int j = 0; j < cout; ++j) gb[j] += g[static_cast<std::size_t>(i) * cout + j];
                      });
    }

    // out = a[M,K] . b[K,N]
    Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
        if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
            throw ContractError("matmul: incompatible shapes a=" + shape_str(a.shape) +
                                " b=" + shape_str(b.shape));
        }
        const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
        std::vector<S> out(static_cast<std::size_t>(m) * n);
        kernels::matmul(a.v.data(), b.v.data(), out.data(), m, k, n);
        const int ai = lift(a), bi = lift(b);
        return record("matmul", {ai, bi}, {m, n}, std::move(out), [m, k, n](Tape& tp, int id) {
            const auto& nd = tp.node(id);
            const auto& g = tp.grad(id);
            const auto& av = tp.values(nd.inputs[0]);
            const auto& bv = tp.values(nd.inputs[1]);
            std::vector<S> tmp(std::max(av.size(), bv.size()));
            kernels::matmul_nt(g.data(), bv.data(), tmp.data(), m, n, k);
            axpy(tp.grad(nd.inputs[0]), tmp.data(), static_cast<std::int64_t>(m) * k);
            kernels::matmul_tn(av.data(), g.data(), tmp.data(), m, k, n);
            axpy(tp.grad(nd.inputs[1]), tmp.data(), static_cast<std::int64_t>(k) * n);
        });
    }

    // out = a[M,K] . b[N,K]^T
    Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
        if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[1]) {
            throw ContractError("matmul_nt: incompatible shapes a=" + shape_str(a.shape) +
                                " b=" + shape_str(b.shape));
        }
        const int m = a.shape[0], k = a.shape[1], n = b.shape[0];
        std::vector<S> out(static_cast<std::size_t>(m) * n);
        kernels::matmul_nt(a.v.data(), b.v.data(), out.data(), m, k, n);
        const int ai = lift(a), bi = lift(b);
        return record("matmul_nt", {ai, bi}, {m, n}, std::move(out), [m, k, n](Tape& tp, int id) {
            const auto& nd = tp.node(id);
            const auto& g = tp.grad(id);
            const auto& av = tp.values(nd.inputs[0]);
            const auto& bv = tp.values(nd.inputs[1]);
            std::vector<S> tmp(std::max(av.size(), bv.size()));
            kernels::matmul(g.data(), bv.data(), tmp.data(), m, n, k);
            axpy(tp.grad(nd.inputs[0]), tmp.data(), static_cast<std::int64_t>(m) * k);
            kernels::matmul_tn(g.data(), av.data(), tmp.data(), m, n, k);
            axpy(tp.grad(nd.inputs[1]), tmp.data(), static_cast<std::int64_t>(n) * k);
        });
    }

    Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
        require_same_shape("add", a, b);
        std::vector<S> out(a.v.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.v[i] + b.v[i];
        const int ai = lift(a), bi = lift(b);
        return record("add", {ai, bi}, a.shape, std::move(out), [](Tape& tp, int id) {
            const auto& nd = tp.node(id);
            const auto& g = tp.grad(id);
            axpy(tp.grad(nd.inputs[0]), g.data(), static_cast<std::int64_t>(g.size()));
            axpy(tp.grad(nd.inputs[1]), g.data(), static_cast<std::int64_t>(g.size()));
        });
    }

    Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
        require_same_shape("mul", a, b);
        std::vector<S> out(a.v.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.v[i] * b.v[i];
        const int ai = lift(a), bi = lift(b);
        return record("mul", {ai, bi}, a.shape, std::move(out), [](Tape& tp, int id) {
            const auto& nd = tp.node(id);
            const auto& g = tp.grad(id);
            const auto& av = tp.values(nd.inputs[0]);
            const auto& bv = tp.values(nd.inputs[1]);
            auto& ga = tp.grad(nd.inputs[0]);
            auto& gb = tp.grad(nd.inputs[1]);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * bv[i];
                gb[i] += g[i] * av[i];
            }
        });
    }

    Tensor<S> sigmoid(const Tensor<S>& x) {
        std::vector<S> out(x.v.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = S(1) / (S(1) + std::exp(-x.v[i]));
        }
        const int xi = lift(x);
        return record("sigmoid", {xi}, x.shape, std::move(out), [](Tape& tp, int id) {
            const auto& nd = tp.node(id);
            const auto& g = tp.grad(id);
            const auto& y = tp.values(id);
            auto& gx = tp.grad(nd.inputs[0]);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (S(1) - y[i]);
        });
    }

    Tensor<S> relu(const Tensor<S>& x) {
        std::vector<S> out(x.v.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.v[i] > S(0) ? x.v[i] : S(0);
        const int xi = lift(x);
        return record("relu", {xi}, x.shape, std::move(out), [](Tape& tp, int id) {
            const auto& nd = tp.node(id);
            const auto& g = tp.grad(id);
            const auto& xv = tp.values(nd.inputs[0]);
            auto& gx = tp.grad(nd.inputs[0]);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (xv[i] > S(0)) gx[i] += g[i];
            }
        });
    }

    // Shift-invariant softmax along `axis`.
    Tensor<S> softmax(const Tensor<S>& x, int axis) {
        check_axis("softmax", x, axis);
        const auto [outer, n, inner] = split_axis(x.shape, axis);
        std::vector<S> out(x.v.size());
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t i = 0; i < inner; ++i) {
                const std::int64_t base = o * n * inner + i;
                S mx = x.v[static_cast<std::size_t>(base)];
                for (int j = 1; j < n; ++j) mx = std::max(mx, x.v[static_cast<std::size_t>(base + j * inner)]);
                S denom = S(0);
                for (int j = 0; j < n; ++j) {
                    const S e = std::exp(x.v[static_cast<std::size_t>(base + j * inner)] - mx);
                    out[static_cast<std::size_t>(base + j * inner)] = e;
                    denom += e;
                }
                for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(base + j * inner)] /= denom;
            }
        }
        const int xi = lift(x);
        return record("softmax", {xi}, x.shape, std::move(out),
                      [outer = outer, n = n, inner = inner](Tape& tp, int id) {
                          const auto& nd = tp.node(id);
                          const auto& g = tp.grad(id);
                          const auto& y = tp.values(id);
                          auto& gx = tp.grad(nd.inputs[0]);
                          for (std::int64_t o = 0; o < outer; ++o) {
                              for (std::int64_t i = 0; i < inner; ++i) {
                                  const std::int64_t base = o * n * inner + i;
                                  S dot = S(0);
                                  for (int j = 0; j < n; ++j) {
                                      const auto k = static_cast<std::size_t>(base + j * inner);
                                      dot += g[k] * y[k];
                                  }
                                  for (int j = 0; j < n; ++j) {
                                      const auto k = static_cast<std::size_t>(base + j * inner);
                                      gx[k] += y[k] * (g[k] - dot);
                                  }
                              }
                          }
                      });
    }

    Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
        if (parts.empty()) throw ContractError("concat: no inputs");
        check_axis("concat", parts[0], axis);
        std::vector<int> shape = parts[0].shape;
        std::vector<int> extents;
        int total = 0;
        for (const auto& p : parts) {
            if (p.rank() != parts[0].rank()) {
                throw ContractError("concat: rank mismatch " + shape_str(p.shape) + " vs " +
                                    shape_str(parts[0].shape));
            }
            for (int d = 0; d < p.rank(); ++d) {
                if (d != axis && p.shape[d] != shape[d]) {
                    throw ContractError("concat: shape mismatch on axis " + std::to_string(d) +
                                        ": " + shape_str(p.shape) + " vs " + shape_str(shape));
                }
            }
            extents.push_back(p.shape[axis]);
            total += p.shape[axis];
        }
        shape[axis] = total;
        const auto [outer, n, inner] = split_axis(shape, axis);
        std::vector<S> out(static_cast<std::size_t>(shape_numel(shape)));
        std::vector<int> ids;
        for (std::int64_t o = 0; o < outer; ++o) {
            std::int64_t row = 0;
            for (const auto& p : parts) {
                const std::int64_t pn = p.shape[axis];
                const S* src = p.v.data() + o * pn * inner;
                S* dst = out.data() + (o * n + row) * inner;
                std::copy(src, src + pn * inner, dst);
                row += pn;
            }
        }
        ids.reserve(parts.size());
        for (const auto& p : parts) ids.push_back(lift(p));
        return record("concat", std::move(ids), shape, std::move(out),
                      [extents, outer = outer, n = n, inner = inner](Tape& tp, int id) {
                          const auto& nd = tp.node(id);
                          const auto& g = tp.grad(id);
                          for (std::int64_t o = 0; o < outer; ++o) {
                              std::int64_t row = 0;
                              for (std::size_t pi = 0; pi < nd.inputs.size(); ++pi) {
                                  const std::int64_t pn = extents[pi];
                                  auto& gp = tp.grad(nd.inputs[pi]);
                                  const S* src = g.data() + (o * n + row) * inner;
                                  S* dst = gp.data() + o * pn * inner;
                                  for (std::int64_t q = 0; q < pn * inner; ++q) dst[q] += src[q];
                                  row += pn;
                              }
                          }
                      });
    }

    // Sum over the given axes (removed from the shape; scalar result is [1]).
    Tensor<S> reduce_sum(const Tensor<S>& x, std::vector<int> axes) {
        std::sort(axes.begin(), axes.end());
        axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
        for (int a : axes) check_axis("reduce_sum", x, a);
        std::vector<bool> reduced(x.shape.size(), false);
        for (int a : axes) reduced[static_cast<std::size_t>(a)] = true;
        std::vector<int> out_shape;
        for (int d = 0; d < x.rank(); ++d) {
            if (!reduced[static_cast<std::size_t>(d)]) out_shape.push_back(x.shape[d]);
        }
        if (out_shape.empty()) out_shape = {1};
        // Output stride per input dim; 0 for reduced dims.
        std::vector<std::int64_t> strides(x.shape.size(), 0);
        std::int64_t run = 1;
        for (int d = x.rank() - 1; d >= 0; --d) {
            if (!reduced[static_cast<std::size_t>(d)]) {
                strides[static_cast<std::size_t>(d)] = run;
                run *= x.shape[static_cast<std::size_t>(d)];
            }
        }
        const std::vector<int> in_shape = x.shape;
        std::vector<S> out(static_cast<std::size_t>(shape_numel(out_shape)), S(0));
        // Row-major walk of the input; contributions land left-to-right.
        walk_reduce(in_shape, strides, [&](std::int64_t in, std::int64_t ou) { out[static_cast<std::size_t>(ou)] += x.v[static_cast<std::size_t>(in)]; });
        const int xi = lift(x);
        return record("reduce_sum", {xi}, out_shape, std::move(out),
                      [in_shape, strides](Tape& tp, int id) {
                          const auto& nd = tp.node(id);
                          const auto& g = tp.grad(id);
                          auto& gx = tp.grad(nd.inputs[0]);
                          walk_reduce(in_shape, strides, [&](std::int64_t in, std::int64_t ou) {
                              gx[static_cast<std::size_t>(in)] += g[static_cast<std::size_t>(ou)];
                          });
                      });
    }

    Tensor<S> scale(const Tensor<S>& x, S factor) {
        std::vector<S> out(x.v.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.v[i] * factor;
        const int xi = lift(x);
        return record("scale", {xi}, x.shape, std::move(out), [factor](Tape& tp, int id) {
            const auto& nd = tp.node(id);
            const auto& g = tp.grad(id);
            auto& gx = tp.grad(nd.inputs[0]);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
        });
    }

    Tensor<S> reshape(const Tensor<S>& x, std::vector<int> shape) {
        if (shape_numel(shape) != x.numel()) {
            throw ContractError("reshape: cannot view " + shape_str(x.shape) + " as " +
                                shape_str(shape));
        }
        const int xi = lift(x);
        return record("reshape", {xi}, std::move(shape), x.v, [](Tape& tp, int id) {
            const auto& nd = tp.node(id);
            const auto& g = tp.grad(id);
            axpy(tp.grad(nd.inputs[0]), g.data(), static_cast<std::int64_t>(g.size()));
        });
    }

    Tensor<S> slice(const Tensor<S>& x, int axis, int start, int len) {
        check_axis("slice", x, axis);
        if (start < 0 || len < 1 || start + len > x.shape[axis]) {
            throw ContractError("slice: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") out of bounds for axis " +
                                std::to_string(axis) + " of " + shape_str(x.shape));
        }
        const auto [outer, n, inner] = split_axis(x.shape, axis);
        std::vector<int> shape = x.shape;
        shape[axis] = len;
        std::vector<S> out(static_cast<std::size_t>(outer * len * inner));
        for (std::int64_t o = 0; o < outer; ++o) {
            const S* src = x.v.data() + (o * n + start) * inner;
            std::copy(src, src + static_cast<std::int64_t>(len) * inner,
                      out.data() + o * len * inner);
        }
        const int xi = lift(x);
        return record("slice", {xi}, std::move(shape), std::move(out),
                      [outer = outer, n = n, inner = inner, start, len](Tape& tp, int id) {
                          const auto& nd = tp.node(id);
                          const auto& g = tp.grad(id);
                          auto& gx = tp.grad(nd.inputs[0]);
                          for (std::int64_t o = 0; o < outer; ++o) {
                              const S* src = g.data() + o * len * inner;
                              S* dst = gx.data() + (o * n + start) * inner;
                              for (std::int64_t q = 0; q < static_cast<std::int64_t>(len) * inner; ++q)
                                  dst[q] += src[q];
                          }
                      });
    }

    // out[r, c] = x[r, c] * s[r]
    Tensor<S> row_scale(const Tensor<S>& x, const Tensor<S>& s) {
        if (x.rank() != 2 || s.rank() != 1 || s.shape[0] != x.shape[0]) {
            throw ContractError("row_scale: incompatible shapes x=" + shape_str(x.shape) +
                                " s=" + shape_str(s.shape));
        }
        const int rows = x.shape[0], cols = x.shape[1];
        std::vector<S> out(x.v.size());
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                out[static_cast<std::size_t>(r) * cols + c] = x.v[static_cast<std::size_t>(r) * cols + c] * s.v[static_cast<std::size_t>(r)];
            }
        }
        const int xi = lift(x), si = lift(s);
        return record("row_scale", {xi, si}, x.shape, std::move(out),
                      [rows, cols](Tape& tp, int id) {
                          const auto& nd = tp.node(id);
                          const auto& g = tp.grad(id);
                          const auto& xv = tp.values(nd.inputs[0]);
                          const auto& sv = tp.values(nd.inputs[1]);
                          auto& gx = tp.grad(nd.inputs[0]);
                          auto& gs = tp.grad(nd.inputs[1]);
                          for (int r = 0; r < rows; ++r) {
                              S acc = S(0);
                              for (int c = 0; c < cols; ++c) {
                                  const auto k = static_cast<std::size_t>(r) * cols + c;
                                  gx[k] += g[k] * sv[static_cast<std::size_t>(r)];
                                  acc += g[k] * xv[k];
                              }
                              gs[static_cast<std::size_t>(r)] += acc;
                          }
                      });
    }

    // ------------------------------------------------------------------
    // Reverse sweep
    // ------------------------------------------------------------------

    void backward(const Tensor<S>& seed) {
        if (seed.node < 0 || seed.node >= size()) {
            throw ContractError("backward: seed tensor is not recorded on this tape");
        }
        if (!seed.is_scalar()) {
            throw ContractError("backward: seed must be scalar, got shape " + shape_str(seed.shape));
        }
        grads_.assign(nodes_.size(), {});
        grad(seed.node).assign(1, S(1));
        for (int id = seed.node; id >= 0; --id) {
            if (!has_grad(id)) continue;
            const auto& nd = nodes_[static_cast<std::size_t>(id)];
            if (nd.backprop) nd.backprop(*this, id);
        }
    }

    // Gradient of the last backward() seed with respect to `t`; exact zeros if
    // the seed did not depend on it.
    Tensor<S> gradient(const Tensor<S>& t) const {
        Tensor<S> g(t.shape);
        if (t.node >= 0 && t.node < static_cast<int>(grads_.size()) &&
            !grads_[static_cast<std::size_t>(t.node)].empty()) {
            g.v = grads_[static_cast<std::size_t>(t.node)];
        }
        return g;
    }

    static void axpy(std::vector<S>& acc, const S* src, std::int64_t n) {
        for (std::int64_t i = 0; i < n; ++i) acc[static_cast<std::size_t>(i)] += src[static_cast<std::size_t>(i)];
    }

 private:
    int push_leaf(const char* op, const Tensor<S>& t) {
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{op, {}, t.shape, t.v, nullptr});
        return id;
    }

    static void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
        if (a.shape != b.shape) {
            throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
        }
    }

    static void check_axis(const char* op, const Tensor<S>& x, int axis) {
        if (axis < 0 || axis >= x.rank()) {
            throw ContractError(std::string(op) + ": axis " + std::to_string(axis) +
                                " invalid for shape " + shape_str(x.shape));
        }
    }

    struct AxisSplit {
        std::int64_t outer;
        int n;
        std::int64_t inner;
    };

    static AxisSplit split_axis(const std::vector<int>& shape, int axis) {
        std::int64_t outer = 1, inner = 1;
        for (int d = 0; d < axis; ++d) outer *= shape[static_cast<std::size_t>(d)];
        for (int d = axis + 1; d < static_cast<int>(shape.size()); ++d) inner *= shape[static_cast<std::size_t>(d)];
        return {outer, shape[static_cast<std::size_t>(axis)], inner};
    }

    // Row-major walk pairing each input offset with its reduction output offset.
    template <typename Fn>
    static void walk_reduce(const std::vector<int>& shape,
                            const std::vector<std::int64_t>& out_strides, Fn&& fn) {
        const int rank = static_cast<int>(shape.size());
        const std::int64_t total = shape_numel(shape);
        std::vector<int> idx(static_cast<std::size_t>(rank), 0);
        std::int64_t out = 0;
        for (std::int64_t i = 0; i < total; ++i) {
            fn(i, out);
            for (int d = rank - 1; d >= 0; --d) {
                const auto du = static_cast<std::size_t>(d);
                ++idx[du];
                out += out_strides[du];
                if (idx[du] < shape[du]) break;
                out -= static_cast<std::int64_t>(idx[du]) * out_strides[du];
                idx[du] = 0;
            }
        }
    }

    std::vector<Node> nodes_;
    std::vector<std::vector<S>> grads_;
};

}  // namespace sparseagg
