#pragma once

#include <map>
#include <string>

#include "davel/rng.hpp"
#include "davel/tape.hpp"
#include "davel/tensor.hpp"

namespace davel::num {

template <typename T>
struct Param {
    Tensor<T> value;
    Tensor<T> grad;
};

// Named parameters with per-tensor gradient accumulators. Iteration is
// sorted by name, which fixes the optimizer update order.
template <typename T>
class ParamStore {
  public:
    Param<T>& create(const std::string& name, std::vector<int64_t> shape) {
        auto [it, inserted] = params_.try_emplace(name);
        if (!inserted) throw ContractError("parameter already exists: " + name);
        it->second.value = Tensor<T>(shape);
        it->second.grad = Tensor<T>(std::move(shape));
        return it->second;
    }

    Param<T>& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ContractError("unknown parameter: " + name);
        return it->second;
    }
    const Param<T>& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ContractError("unknown parameter: " + name);
        return it->second;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    size_t size() const { return params_.size(); }

    void zero_grads() {
        for (auto& [name, p] : params_)
            std::fill(p.grad.data.begin(), p.grad.data.end(), T(0));
    }

    int64_t total_elements() const {
        int64_t n = 0;
        for (const auto& [name, p] : params_) n += p.value.numel();
        return n;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [name, p] : params_) {
            auto& q = out.create(name, p.value.shape);
            q.value = p.value.template cast<U>();
        }
        return out;
    }

  private:
    std::map<std::string, Param<T>> params_;
};

// Per-tape view of a store: looking a name up creates the leaf once and
// reuses it, so each parameter appears exactly once per tape.
template <typename T>
class BoundParams {
  public:
    BoundParams(Tape<T>& tape, ParamStore<T>& store) : tape_(&tape), store_(&store) {}

    Val<T> operator()(const std::string& name) {
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        Param<T>& p = store_->at(name);
        Val<T> v = tape_->leaf(p.value, &p.grad);
        cache_.emplace(name, v);
        return v;
    }

    Tape<T>& tape() { return *tape_; }
    ParamStore<T>& store() { return *store_; }

  private:
    Tape<T>* tape_;
    ParamStore<T>* store_;
    std::map<std::string, Val<T>> cache_;
};

// Truncated normal for projections, zeros for biases, ones/zeros for
// layernorm scale/shift.
template <typename T>
void init_trunc_normal(Tensor<T>& t, SeededRng& rng, double sigma = 0.02) {
    for (T& v : t.data) v = static_cast<T>(rng.truncated_normal(sigma, 2.0 * sigma));
}

template <typename T>
void init_ones(Tensor<T>& t) {
    std::fill(t.data.begin(), t.data.end(), T(1));
}

}  // namespace davel::num
