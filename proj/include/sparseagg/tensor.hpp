#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sparseagg/common.hpp"
#include "sparseagg/rng.hpp"

namespace sparseagg {

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
        if (e < 1) throw ContractError("tensor: shape extent must be >= 1, got " + shape_str(shape));
        n *= e;
    }
    return n;
}

// Dense row-major array of scalars. `node` is an optional handle into the
// Tape that produced it; -1 means the tensor is a plain constant.
template <typename S>
struct Tensor {
    std::vector<int> shape;
    std::vector<S> v;
    int node = -1;

    Tensor() : shape{1}, v(1, S(0)) {}

    explicit Tensor(std::vector<int> shp) : shape(std::move(shp)), v(shape_numel(shape), S(0)) {}

    Tensor(std::vector<int> shp, std::vector<S> vals) : shape(std::move(shp)), v(std::move(vals)) {
        if (static_cast<std::int64_t>(v.size()) != shape_numel(shape)) {
            throw ContractError("tensor: value count " + std::to_string(v.size()) +
                                " does not match shape " + shape_str(shape));
        }
    }

    static Tensor scalar(S val) { return Tensor({1}, {val}); }

    static Tensor full(std::vector<int> shp, S val) {
        Tensor t(std::move(shp));
        for (auto& x : t.v) x = val;
        return t;
    }

    int rank() const { return static_cast<int>(shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
    bool is_scalar() const { return numel() == 1; }

    S scalar_value() const {
        if (!is_scalar()) throw ContractError("tensor: scalar_value on shape " + shape_str(shape));
        return v[0];
    }

    S& operator[](std::int64_t i) { return v[static_cast<std::size_t>(i)]; }
    const S& operator[](std::int64_t i) const { return v[static_cast<std::size_t>(i)]; }

    std::int64_t index(std::initializer_list<int> idx) const {
        std::int64_t off = 0;
        int d = 0;
        for (int i : idx) {
            off = off * shape[d] + i;
            ++d;
        }
        return off;
    }

    S at(std::initializer_list<int> idx) const { return v[static_cast<std::size_t>(index(idx))]; }
    S& at_ref(std::initializer_list<int> idx) { return v[static_cast<std::size_t>(index(idx))]; }

    bool all_finite() const {
        for (const S& x : v) {
            if (!std::isfinite(static_cast<double>(x))) return false;
        }
        return true;
    }

    // Same values, no graph handle.
    Tensor detached() const {
        Tensor t = *this;
        t.node = -1;
        return t;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> t;
        t.shape = shape;
        t.v.resize(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) t.v[i] = static_cast<U>(v[i]);
        return t;
    }
};

template <typename S>
Tensor<S> random_uniform(Rng& rng, std::vector<int> shape, double lo, double hi) {
    Tensor<S> t(std::move(shape));
    for (auto& x : t.v) x = static_cast<S>(rng.uniform(lo, hi));
    return t;
}

template <typename S>
Tensor<S> random_normal(Rng& rng, std::vector<int> shape, double stddev) {
    Tensor<S> t(std::move(shape));
    for (auto& x : t.v) x = static_cast<S>(rng.normal() * stddev);
    return t;
}

}  // namespace sparseagg
