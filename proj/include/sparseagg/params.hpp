#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sparseagg/tape.hpp"
#include "sparseagg/tensor.hpp"

namespace sparseagg {

template <typename S>
struct Parameter {
    std::string name;
    Tensor<S> value;
    std::vector<S> grad;  // accumulator, same extent as value
};

// Named parameters in registration order (the checkpoint manifest order).
template <typename S>
class ParamStore {
 public:
    int add(std::string name, Tensor<S> init) {
        const int id = static_cast<int>(params_.size());
        std::vector<S> g(init.v.size(), S(0));
        params_.push_back(Parameter<S>{std::move(name), std::move(init), std::move(g)});
        return id;
    }

    int count() const { return static_cast<int>(params_.size()); }
    Parameter<S>& param(int id) { return params_[static_cast<std::size_t>(id)]; }
    const Parameter<S>& param(int id) const { return params_[static_cast<std::size_t>(id)]; }

    int find(const std::string& name) const {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (params_[i].name == name) return static_cast<int>(i);
        }
        return -1;
    }

    void zero_grad() {
        for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), S(0));
    }

    double grad_norm() const {
        double acc = 0.0;
        for (const auto& p : params_) {
            for (const S& g : p.grad) acc += static_cast<double>(g) * static_cast<double>(g);
        }
        return std::sqrt(acc);
    }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& p : params_) out.add(p.name, p.value.template cast<U>());
        return out;
    }

 private:
    std::vector<Parameter<S>> params_;
};

// Binds store parameters onto one tape for a single forward/backward pass.
template <typename S>
class PassContext {
 public:
    PassContext(Tape<S>& tape, ParamStore<S>& store) : tape_(&tape), store_(&store) {
        bound_.resize(static_cast<std::size_t>(store.count()));
        used_.assign(static_cast<std::size_t>(store.count()), 0);
    }

    // Lifts the parameter as a differentiable leaf (once per pass).
    const Tensor<S>& use(int param_id) {
        auto& slot = bound_[static_cast<std::size_t>(param_id)];
        if (!used_[static_cast<std::size_t>(param_id)]) {
            slot = tape_->input(store_->param(param_id).value);
            used_[static_cast<std::size_t>(param_id)] = 1;
        }
        return slot;
    }

    // Substitutes an explicit tensor for a parameter in this pass (used by
    // gradient checks to route derivatives through caller-provided leaves).
    void bind(int param_id, const Tensor<S>& t) {
        bound_[static_cast<std::size_t>(param_id)] = t;
        used_[static_cast<std::size_t>(param_id)] = 1;
    }

    // After tape.backward(): adds the pass gradients into the accumulators.
    void accumulate_grads() {
        for (int id = 0; id < store_->count(); ++id) {
            if (!used_[static_cast<std::size_t>(id)]) continue;
            const Tensor<S> g = tape_->gradient(bound_[static_cast<std::size_t>(id)]);
            auto& acc = store_->param(id).grad;
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g.v[i];
        }
    }

    Tape<S>& tape() { return *tape_; }

 private:
    Tape<S>* tape_;
    ParamStore<S>* store_;
    std::vector<Tensor<S>> bound_;
    std::vector<char> used_;
};

}  // namespace sparseagg
