#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bldlab {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// splitmix64; used to derive per-component seeds from the root seed.
inline uint64_t mix_seed(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t root, const std::string& tag) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a 64
    for (unsigned char c : tag) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return mix_seed(root ^ h);
}

inline uint64_t derive_seed(uint64_t root, const std::string& tag, uint64_t index) {
    return mix_seed(derive_seed(root, tag) ^ mix_seed(index));
}

struct Rng {
    std::mt19937_64 gen;

    explicit Rng(uint64_t seed) : gen(seed) {}

    double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen); }
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen); }
    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(gen);
    }
    // inclusive bounds
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return std::uniform_int_distribution<int64_t>(lo, hi)(gen);
    }
};

template <class T>
class Tape;

template <class T>
struct TensorImpl {
    Shape shape;
    std::vector<T> v;
    std::vector<T> g;  // allocated iff requires_grad
    bool requires_grad = false;
    const Tape<T>* tape = nullptr;  // tape that produced this tensor
    uint64_t tape_epoch = 0;
};

// Shared handle to a dense n-d array. Values are written once by the op
// that creates the tensor; afterwards only grad/optimizer writes mutate it.
template <class T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.p_ = std::make_shared<TensorImpl<T>>();
        t.p_->shape = std::move(shape);
        t.p_->v.assign(bldlab::numel(t.p_->shape), T(0));
        t.p_->requires_grad = requires_grad;
        if (requires_grad) t.p_->g.assign(t.p_->v.size(), T(0));
        return t;
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& x : t.p_->v) x = value;
        return t;
    }

    static Tensor from(std::vector<T> values, Shape shape, bool requires_grad = false) {
        if ((int64_t)values.size() != bldlab::numel(shape))
            throw std::invalid_argument("tensor: data length " +
                                        std::to_string(values.size()) +
                                        " does not match shape " + shape_str(shape));
        Tensor t;
        t.p_ = std::make_shared<TensorImpl<T>>();
        t.p_->shape = std::move(shape);
        t.p_->v = std::move(values);
        t.p_->requires_grad = requires_grad;
        if (requires_grad) t.p_->g.assign(t.p_->v.size(), T(0));
        return t;
    }

    static Tensor scalar(T value) { return from({value}, {1}); }

    static Tensor randn(Shape shape, Rng& rng, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& x : t.p_->v) x = (T)rng.normal();
        return t;
    }

    bool defined() const { return (bool)p_; }
    const Shape& shape() const { return p_->shape; }
    int dim(int i) const { return p_->shape[i]; }
    int64_t numel() const { return (int64_t)p_->v.size(); }
    bool requires_grad() const { return p_->requires_grad; }

    std::vector<T>& data() { return p_->v; }
    const std::vector<T>& data() const { return p_->v; }
    std::vector<T>& grad() {
        ensure_grad();
        return p_->g;
    }
    const std::vector<T>& grad() const { return p_->g; }
    bool has_grad() const { return !p_->g.empty(); }

    T item() const {
        if (p_->v.size() != 1)
            throw std::invalid_argument("item: tensor has " +
                                        std::to_string(p_->v.size()) + " elements");
        return p_->v[0];
    }

    void set_requires_grad(bool rg) { p_->requires_grad = rg; }

    // Allocates (if needed) and clears the grad accumulator.
    void zero_grad() {
        if (!p_->requires_grad) return;
        if (p_->g.empty())
            p_->g.assign(p_->v.size(), T(0));
        else
            std::fill(p_->g.begin(), p_->g.end(), T(0));
    }

    // Value copy with no grad tracking and no tape link.
    Tensor detach() const {
        Tensor t;
        t.p_ = std::make_shared<TensorImpl<T>>();
        t.p_->shape = p_->shape;
        t.p_->v = p_->v;
        return t;
    }

    TensorImpl<T>* impl() const { return p_.get(); }

    bool same_storage(const Tensor& other) const { return p_ == other.p_; }

private:
    void ensure_grad() {
        if (p_->g.empty()) p_->g.assign(p_->v.size(), T(0));
    }

    std::shared_ptr<TensorImpl<T>> p_;
};

// Reverse-mode tape. One tape per training step; ops append a backward
// closure in execution order, backward() replays them in reverse. clear()
// drops recorded closures (and with them the captured activations).
template <class T>
class Tape {
public:
    void record(std::function<void()> backward_fn) {
        nodes_.push_back(std::move(backward_fn));
    }

    // Marks t as produced by this tape.
    void adopt(Tensor<T>& t) {
        t.impl()->tape = this;
        t.impl()->tape_epoch = epoch_;
        t.set_requires_grad(true);
        adopted_.push_back(t);
    }

    bool owns(const Tensor<T>& t) const {
        return t.impl()->tape == this && t.impl()->tape_epoch == epoch_;
    }

    // Flow-through grads of tape-produced tensors are reset per pass; only
    // leaves (parameters, inputs) accumulate across repeated backward calls.
    void backward(Tensor<T>& loss) {
        if (loss.numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        shape_str(loss.shape()));
        if (!owns(loss))
            throw std::invalid_argument(
                "backward: tensor is detached from this tape");
        for (auto& t : adopted_) t.zero_grad();
        loss.grad()[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    void clear() {
        nodes_.clear();
        adopted_.clear();
        ++epoch_;
    }

    size_t size() const { return nodes_.size(); }

private:
    std::vector<std::function<void()>> nodes_;
    std::vector<Tensor<T>> adopted_;
    uint64_t epoch_ = 1;
};

}  // namespace bldlab
