#pragma once

#include <algorithm>
#include <functional>

#include "bldlab/tensor.hpp"

namespace bldlab {

// Named map of learnable tensors with deterministic (name-sorted) iteration.
template <class T>
class ParameterSet {
public:
    Tensor<T>& add(const std::string& name, Tensor<T> t) {
        auto it = lower_bound(name);
        if (it != items_.end() && it->first == name)
            throw std::invalid_argument("parameter set: duplicate name '" + name + "'");
        t.set_requires_grad(true);
        it = items_.insert(it, {name, std::move(t)});
        return it->second;
    }

    Tensor<T>* find(const std::string& name) {
        auto it = lower_bound(name);
        return (it != items_.end() && it->first == name) ? &it->second : nullptr;
    }

    const Tensor<T>* find(const std::string& name) const {
        return const_cast<ParameterSet*>(this)->find(name);
    }

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }
    size_t size() const { return items_.size(); }

    int64_t scalar_count() const {
        int64_t n = 0;
        for (const auto& [name, t] : items_) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [name, t] : items_) t.zero_grad();
    }

    // Copies values from another set; shapes and names must agree.
    void load_values_from(const ParameterSet& src) {
        if (src.size() != size())
            throw std::invalid_argument("parameter set: size mismatch " +
                                        std::to_string(src.size()) + " vs " +
                                        std::to_string(size()));
        for (size_t i = 0; i < items_.size(); ++i) {
            if (items_[i].first != src.items_[i].first ||
                items_[i].second.shape() != src.items_[i].second.shape())
                throw std::invalid_argument("parameter set: mismatch at '" +
                                            items_[i].first + "'");
            items_[i].second.data() = src.items_[i].second.data();
        }
    }

private:
    using Item = std::pair<std::string, Tensor<T>>;
    typename std::vector<Item>::iterator lower_bound(const std::string& name) {
        return std::lower_bound(items_.begin(), items_.end(), name,
                                [](const Item& a, const std::string& b) { return a.first < b; });
    }
    std::vector<Item> items_;
};

// Kaiming-uniform weight init: bound = sqrt(6 / fan_in), biases zero.
template <class T>
Tensor<T> kaiming_uniform(Shape shape, int64_t fan_in, Rng& rng) {
    double bound = std::sqrt(6.0 / (double)fan_in);
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    for (auto& x : t.data()) x = (T)rng.uniform(-bound, bound);
    return t;
}

template <class T>
struct AdamState {
    T lr = (T)1e-3;
    T beta1 = (T)0.9;
    T beta2 = (T)0.999;
    T eps = (T)1e-8;
    int64_t step = 0;
    // first/second moments keyed like the parameter set, same order
    std::vector<std::pair<std::string, std::pair<std::vector<T>, std::vector<T>>>> moments;

    static AdamState init(const ParameterSet<T>& params, T lr) {
        AdamState s;
        s.lr = lr;
        for (const auto& [name, t] : params)
            s.moments.push_back({name,
                                 {std::vector<T>(t.numel(), T(0)),
                                  std::vector<T>(t.numel(), T(0))}});
        return s;
    }
};

// Standard Adam with bias correction. Grads are left untouched; the caller
// zeroes them. Same (params, grads, state) always produces the same update.
template <class T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state) {
    if (state.moments.size() != params.size())
        throw std::invalid_argument("adam_step: state tracks " +
                                    std::to_string(state.moments.size()) +
                                    " parameters, set has " + std::to_string(params.size()));
    state.step += 1;
    T bc1 = T(1) - std::pow(state.beta1, (T)state.step);
    T bc2 = T(1) - std::pow(state.beta2, (T)state.step);
    size_t idx = 0;
    for (auto& [name, t] : params) {
        auto& [mname, mv] = state.moments[idx++];
        if (mname != name)
            throw std::invalid_argument("adam_step: state/parameter order diverged at '" +
                                        name + "'");
        if (!t.has_grad())
            throw std::invalid_argument("adam_step: parameter '" + name + "' has no gradient");
        auto& m = mv.first;
        auto& v = mv.second;
        T* p = t.data().data();
        const T* g = t.grad().data();
        for (int64_t i = 0; i < t.numel(); ++i) {
            m[i] = state.beta1 * m[i] + (T(1) - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (T(1) - state.beta2) * g[i] * g[i];
            T mhat = m[i] / bc1;
            T vhat = v[i] / bc2;
            p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

template <class T>
struct GradCheckReport {
    T max_rel_err = 0;
    T mean_rel_err = 0;
    int64_t checked = 0;
};

// Compares tape gradients against central finite differences over every
// parameter scalar. loss_fn must rebuild the forward pass on the given tape.
// Relative error uses a small floor so that near-zero gradient pairs are
// compared absolutely; two exact zeros count as zero error.
template <class T>
GradCheckReport<T> grad_check(ParameterSet<T>& params,
                              const std::function<Tensor<T>(Tape<T>&)>& loss_fn,
                              T h) {
    if (params.scalar_count() > 50000)
        throw std::invalid_argument("grad_check: parameter count " +
                                    std::to_string(params.scalar_count()) +
                                    " exceeds finite-difference budget (5e4)");
    params.zero_grad();
    Tape<T> tape;
    Tensor<T> loss = loss_fn(tape);
    tape.backward(loss);
    tape.clear();

    std::vector<std::vector<T>> analytic;
    for (auto& [name, t] : params) analytic.push_back(t.grad());

    const T floor = (T)1e-3;
    GradCheckReport<T> rep;
    T sum_err = 0;
    size_t pi = 0;
    for (auto& [name, t] : params) {
        T* p = t.data().data();
        for (int64_t i = 0; i < t.numel(); ++i) {
            T saved = p[i];
            p[i] = saved + h;
            Tape<T> t1;
            T lp = loss_fn(t1).item();
            t1.clear();
            p[i] = saved - h;
            Tape<T> t2;
            T lm = loss_fn(t2).item();
            t2.clear();
            p[i] = saved;
            T fd = (lp - lm) / (T(2) * h);
            T an = analytic[pi][i];
            T denom = std::max(std::abs(fd) + std::abs(an), floor);
            T err = std::abs(fd - an) / denom;
            if (fd == T(0) && an == T(0)) err = 0;
            rep.max_rel_err = std::max(rep.max_rel_err, err);
            sum_err += err;
            ++rep.checked;
        }
        ++pi;
    }
    rep.mean_rel_err = rep.checked ? sum_err / (T)rep.checked : T(0);
    params.zero_grad();
    return rep;
}

}  // namespace bldlab
