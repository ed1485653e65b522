#pragma once

#include "bldlab/ops.hpp"
#include "bldlab/optim.hpp"

// Thin parameter-owning layer wrappers. Construction registers tensors into
// the model's ParameterSet under dotted names; handles share storage, so
// optimizer updates through the set are visible here.

namespace bldlab {

template <class T>
struct Conv {
    Tensor<T> w, b;
    int stride = 1;

    Tensor<T> operator()(Tape<T>* tape, const Tensor<T>& x) const {
        return conv2d(tape, x, w, b, stride);
    }
};

template <class T>
Conv<T> make_conv(ParameterSet<T>& ps, const std::string& name, int in_c, int out_c,
                  int k, int stride, Rng& rng) {
    Conv<T> c;
    c.w = ps.add(name + ".w",
                 kaiming_uniform<T>({out_c, in_c, k, k}, (int64_t)in_c * k * k, rng));
    c.b = ps.add(name + ".b", Tensor<T>::zeros({out_c}));
    c.stride = stride;
    return c;
}

template <class T>
struct Norm {
    Tensor<T> gamma, beta;
    int groups = 8;

    Tensor<T> operator()(Tape<T>* tape, const Tensor<T>& x) const {
        return group_norm(tape, x, gamma, beta, groups);
    }
};

template <class T>
Norm<T> make_norm(ParameterSet<T>& ps, const std::string& name, int channels, int groups) {
    Norm<T> n;
    n.gamma = ps.add(name + ".g", Tensor<T>::full({channels}, T(1)));
    n.beta = ps.add(name + ".b", Tensor<T>::zeros({channels}));
    n.groups = groups;
    return n;
}

template <class T>
struct Dense {
    Tensor<T> w, b;

    Tensor<T> operator()(Tape<T>* tape, const Tensor<T>& x) const {
        return linear(tape, x, w, b);
    }
};

template <class T>
Dense<T> make_dense(ParameterSet<T>& ps, const std::string& name, int in_f, int out_f,
                    Rng& rng) {
    Dense<T> d;
    d.w = ps.add(name + ".w", kaiming_uniform<T>({out_f, in_f}, in_f, rng));
    d.b = ps.add(name + ".b", Tensor<T>::zeros({out_f}));
    return d;
}

// Stacks same-shaped tensors along a new batch dimension.
template <class T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
    if (items.empty()) throw std::invalid_argument("stack_batch: empty list");
    Shape s = items[0].shape();
    for (const auto& t : items)
        if (t.shape() != s)
            throw std::invalid_argument("stack_batch: shape mismatch " + shape_str(s) +
                                        " vs " + shape_str(t.shape()));
    Shape out_shape;
    out_shape.push_back((int)items.size());
    for (int d : s) out_shape.push_back(d);
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    int64_t n = items[0].numel();
    for (size_t i = 0; i < items.size(); ++i)
        std::memcpy(out.data().data() + (int64_t)i * n, items[i].data().data(),
                    sizeof(T) * n);
    return out;
}

// Repeats a [1,...] tensor along the batch dimension.
template <class T>
Tensor<T> repeat_batch(const Tensor<T>& t, int n) {
    if (t.shape().empty() || t.dim(0) != 1)
        throw std::invalid_argument("repeat_batch: expected leading batch of 1, got " +
                                    shape_str(t.shape()));
    Shape s = t.shape();
    s[0] = n;
    Tensor<T> out = Tensor<T>::zeros(s);
    for (int i = 0; i < n; ++i)
        std::memcpy(out.data().data() + (int64_t)i * t.numel(), t.data().data(),
                    sizeof(T) * t.numel());
    return out;
}

}  // namespace bldlab
