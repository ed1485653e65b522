#pragma once

#include <algorithm>
#include <cstring>
#include <memory>

#include "bldlab/blas.hpp"
#include "bldlab/tensor.hpp"

// Differentiable op set: each op validates shapes, computes the forward
// value, and (when a tape is active and some input tracks gradients)
// records a backward closure. Inputs named in closures are captured by
// handle, so activations live exactly as long as the tape.

namespace bldlab {

// NaN/Inf detection for verification runs; off by default.
inline bool& debug_checks() {
    static bool enabled = false;
    return enabled;
}

template <class T>
inline void maybe_check_finite(const Tensor<T>& t, const char* op) {
    if (!debug_checks()) return;
    for (T x : t.data())
        if (!std::isfinite((double)x))
            throw std::runtime_error(std::string(op) + ": non-finite value detected");
}

template <class T>
inline bool want_grad(Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
    if (!tape) return false;
    for (auto* t : inputs)
        if ((*t).requires_grad()) return true;
    return false;
}

template <class T>
inline void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("add", a, b);
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out.data().data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
    if (want_grad(tape, {&a, &b})) {
        tape->adopt(out);
        Tensor<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            const T* go = oc.grad().data();
            if (ac.requires_grad()) {
                T* ga = ac.grad().data();
                for (int64_t i = 0; i < ac.numel(); ++i) ga[i] += go[i];
            }
            if (bc.requires_grad()) {
                T* gb = bc.grad().data();
                for (int64_t i = 0; i < bc.numel(); ++i) gb[i] += go[i];
            }
        });
    }
    maybe_check_finite(out, "add");
    return out;
}

template <class T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("mul", a, b);
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out.data().data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i];
    if (want_grad(tape, {&a, &b})) {
        tape->adopt(out);
        Tensor<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            const T* go = oc.grad().data();
            if (ac.requires_grad()) {
                T* ga = ac.grad().data();
                const T* pb2 = bc.data().data();
                for (int64_t i = 0; i < ac.numel(); ++i) ga[i] += go[i] * pb2[i];
            }
            if (bc.requires_grad()) {
                T* gb = bc.grad().data();
                const T* pa2 = ac.data().data();
                for (int64_t i = 0; i < bc.numel(); ++i) gb[i] += go[i] * pa2[i];
            }
        });
    }
    maybe_check_finite(out, "mul");
    return out;
}

template <class T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& a, T factor) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data().data();
    T* po = out.data().data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * factor;
    if (want_grad(tape, {&a})) {
        tape->adopt(out);
        Tensor<T> ac = a, oc = out;
        tape->record([ac, oc, factor]() mutable {
            if (!ac.requires_grad()) return;
            const T* go = oc.grad().data();
            T* ga = ac.grad().data();
            for (int64_t i = 0; i < ac.numel(); ++i) ga[i] += go[i] * factor;
        });
    }
    return out;
}

template <class T>
Tensor<T> silu(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data().data();
    T* po = out.data().data();
    for (int64_t i = 0; i < x.numel(); ++i) {
        T s = T(1) / (T(1) + std::exp(-px[i]));
        po[i] = px[i] * s;
    }
    if (want_grad(tape, {&x})) {
        tape->adopt(out);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            if (!xc.requires_grad()) return;
            const T* go = oc.grad().data();
            const T* px2 = xc.data().data();
            T* gx = xc.grad().data();
            for (int64_t i = 0; i < xc.numel(); ++i) {
                T s = T(1) / (T(1) + std::exp(-px2[i]));
                gx[i] += go[i] * s * (T(1) + px2[i] * (T(1) - s));
            }
        });
    }
    maybe_check_finite(out, "silu");
    return out;
}

template <class T>
Tensor<T> tanh_op(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data().data();
    T* po = out.data().data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = std::tanh(px[i]);
    if (want_grad(tape, {&x})) {
        tape->adopt(out);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            if (!xc.requires_grad()) return;
            const T* go = oc.grad().data();
            const T* po2 = oc.data().data();
            T* gx = xc.grad().data();
            for (int64_t i = 0; i < xc.numel(); ++i)
                gx[i] += go[i] * (T(1) - po2[i] * po2[i]);
        });
    }
    return out;
}

template <class T>
Tensor<T> exp_op(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data().data();
    T* po = out.data().data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = std::exp(px[i]);
    if (want_grad(tape, {&x})) {
        tape->adopt(out);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            if (!xc.requires_grad()) return;
            const T* go = oc.grad().data();
            const T* po2 = oc.data().data();
            T* gx = xc.grad().data();
            for (int64_t i = 0; i < xc.numel(); ++i) gx[i] += go[i] * po2[i];
        });
    }
    maybe_check_finite(out, "exp");
    return out;
}

// ---------------------------------------------------------------------------
// reductions / losses
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (want_grad(tape, {&x})) {
        tape->adopt(out);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            if (!xc.requires_grad()) return;
            T go = oc.grad()[0];
            T* gx = xc.grad().data();
            for (int64_t i = 0; i < xc.numel(); ++i) gx[i] += go;
        });
    }
    return out;
}

template <class T>
Tensor<T> mse(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("mse", a, b);
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T acc = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        T d = pa[i] - pb[i];
        acc += d * d;
    }
    Tensor<T> out = Tensor<T>::scalar(acc / (T)a.numel());
    if (want_grad(tape, {&a, &b})) {
        tape->adopt(out);
        Tensor<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            T go = oc.grad()[0];
            T scale2 = T(2) * go / (T)ac.numel();
            const T* pa2 = ac.data().data();
            const T* pb2 = bc.data().data();
            if (ac.requires_grad()) {
                T* ga = ac.grad().data();
                for (int64_t i = 0; i < ac.numel(); ++i)
                    ga[i] += scale2 * (pa2[i] - pb2[i]);
            }
            if (bc.requires_grad()) {
                T* gb = bc.grad().data();
                for (int64_t i = 0; i < bc.numel(); ++i)
                    gb[i] -= scale2 * (pa2[i] - pb2[i]);
            }
        });
    }
    maybe_check_finite(out, "mse");
    return out;
}

// Mean over elements of the per-element KL divergence to N(0, 1):
// 0.5 * (mu^2 + exp(logvar) - 1 - logvar).
template <class T>
Tensor<T> kl_normal(Tape<T>* tape, const Tensor<T>& mean, const Tensor<T>& logvar) {
    require_same_shape("kl_normal", mean, logvar);
    const T* pm = mean.data().data();
    const T* pl = logvar.data().data();
    T acc = 0;
    for (int64_t i = 0; i < mean.numel(); ++i)
        acc += T(0.5) * (pm[i] * pm[i] + std::exp(pl[i]) - T(1) - pl[i]);
    Tensor<T> out = Tensor<T>::scalar(acc / (T)mean.numel());
    if (want_grad(tape, {&mean, &logvar})) {
        tape->adopt(out);
        Tensor<T> mc = mean, lc = logvar, oc = out;
        tape->record([mc, lc, oc]() mutable {
            T go = oc.grad()[0] / (T)mc.numel();
            if (mc.requires_grad()) {
                const T* pm2 = mc.data().data();
                T* gm = mc.grad().data();
                for (int64_t i = 0; i < mc.numel(); ++i) gm[i] += go * pm2[i];
            }
            if (lc.requires_grad()) {
                const T* pl2 = lc.data().data();
                T* gl = lc.grad().data();
                for (int64_t i = 0; i < lc.numel(); ++i)
                    gl[i] += go * T(0.5) * (std::exp(pl2[i]) - T(1));
            }
        });
    }
    maybe_check_finite(out, "kl_normal");
    return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> concat_channels(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape().size() != 4 || b.shape().size() != 4 || a.dim(0) != b.dim(0) ||
        a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw std::invalid_argument("concat_channels: incompatible shapes " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    int64_t hw = (int64_t)h * w;
    Tensor<T> out = Tensor<T>::zeros({n, ca + cb, h, w});
    for (int i = 0; i < n; ++i) {
        std::memcpy(out.data().data() + ((int64_t)i * (ca + cb)) * hw,
                    a.data().data() + (int64_t)i * ca * hw, sizeof(T) * ca * hw);
        std::memcpy(out.data().data() + ((int64_t)i * (ca + cb) + ca) * hw,
                    b.data().data() + (int64_t)i * cb * hw, sizeof(T) * cb * hw);
    }
    if (want_grad(tape, {&a, &b})) {
        tape->adopt(out);
        Tensor<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, n, ca, cb, hw]() mutable {
            const T* go = oc.grad().data();
            for (int i = 0; i < n; ++i) {
                if (ac.requires_grad()) {
                    T* ga = ac.grad().data() + (int64_t)i * ca * hw;
                    const T* src = go + (int64_t)i * (ca + cb) * hw;
                    for (int64_t j = 0; j < ca * hw; ++j) ga[j] += src[j];
                }
                if (bc.requires_grad()) {
                    T* gb = bc.grad().data() + (int64_t)i * cb * hw;
                    const T* src = go + ((int64_t)i * (ca + cb) + ca) * hw;
                    for (int64_t j = 0; j < cb * hw; ++j) gb[j] += src[j];
                }
            }
        });
    }
    return out;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(Tape<T>* tape, const Tensor<T>& x,
                                               int first_channels) {
    if (x.shape().size() != 4 || first_channels <= 0 || first_channels >= x.dim(1))
        throw std::invalid_argument("split_channels: cannot split " +
                                    shape_str(x.shape()) + " at channel " +
                                    std::to_string(first_channels));
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int ca = first_channels, cb = c - first_channels;
    int64_t hw = (int64_t)h * w;
    Tensor<T> a = Tensor<T>::zeros({n, ca, h, w});
    Tensor<T> b = Tensor<T>::zeros({n, cb, h, w});
    for (int i = 0; i < n; ++i) {
        std::memcpy(a.data().data() + (int64_t)i * ca * hw,
                    x.data().data() + (int64_t)i * c * hw, sizeof(T) * ca * hw);
        std::memcpy(b.data().data() + (int64_t)i * cb * hw,
                    x.data().data() + ((int64_t)i * c + ca) * hw, sizeof(T) * cb * hw);
    }
    if (want_grad(tape, {&x})) {
        tape->adopt(a);
        tape->adopt(b);
        Tensor<T> xc = x, acp = a, bcp = b;
        tape->record([xc, acp, bcp, n, ca, cb, c, hw]() mutable {
            if (!xc.requires_grad()) return;
            T* gx = xc.grad().data();
            const T* ga = acp.grad().data();
            const T* gb = bcp.grad().data();
            for (int i = 0; i < n; ++i) {
                T* dst = gx + (int64_t)i * c * hw;
                const T* sa = ga + (int64_t)i * ca * hw;
                for (int64_t j = 0; j < ca * hw; ++j) dst[j] += sa[j];
                const T* sb = gb + (int64_t)i * cb * hw;
                for (int64_t j = 0; j < cb * hw; ++j) dst[ca * hw + j] += sb[j];
            }
        });
    }
    return {a, b};
}

// ---------------------------------------------------------------------------
// spatial ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> nearest_upsample2x(Tape<T>* tape, const Tensor<T>& x) {
    if (x.shape().size() != 4)
        throw std::invalid_argument("nearest_upsample2x: expected NCHW, got " +
                                    shape_str(x.shape()));
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> out = Tensor<T>::zeros({n, c, 2 * h, 2 * w});
    const T* px = x.data().data();
    T* po = out.data().data();
    for (int64_t nc = 0; nc < (int64_t)n * c; ++nc) {
        const T* src = px + nc * h * w;
        T* dst = po + nc * 4 * h * w;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                T v = src[y * w + xx];
                T* d = dst + (2 * y) * (2 * w) + 2 * xx;
                d[0] = v;
                d[1] = v;
                d[2 * w] = v;
                d[2 * w + 1] = v;
            }
    }
    if (want_grad(tape, {&x})) {
        tape->adopt(out);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc, n, c, h, w]() mutable {
            if (!xc.requires_grad()) return;
            const T* go = oc.grad().data();
            T* gx = xc.grad().data();
            for (int64_t nc = 0; nc < (int64_t)n * c; ++nc) {
                T* dst = gx + nc * h * w;
                const T* src = go + nc * 4 * h * w;
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) {
                        const T* s = src + (2 * y) * (2 * w) + 2 * xx;
                        dst[y * w + xx] += s[0] + s[1] + s[2 * w] + s[2 * w + 1];
                    }
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> avgpool2x(Tape<T>* tape, const Tensor<T>& x) {
    if (x.shape().size() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
        throw std::invalid_argument("avgpool2x: spatial dims must be even, got " +
                                    shape_str(x.shape()));
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int oh = h / 2, ow = w / 2;
    Tensor<T> out = Tensor<T>::zeros({n, c, oh, ow});
    const T* px = x.data().data();
    T* po = out.data().data();
    for (int64_t nc = 0; nc < (int64_t)n * c; ++nc) {
        const T* src = px + nc * h * w;
        T* dst = po + nc * oh * ow;
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx) {
                const T* s = src + (2 * y) * w + 2 * xx;
                dst[y * ow + xx] = (s[0] + s[1] + s[w] + s[w + 1]) * T(0.25);
            }
    }
    if (want_grad(tape, {&x})) {
        tape->adopt(out);
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc, n, c, h, w, oh, ow]() mutable {
            if (!xc.requires_grad()) return;
            const T* go = oc.grad().data();
            T* gx = xc.grad().data();
            for (int64_t nc = 0; nc < (int64_t)n * c; ++nc) {
                T* dst = gx + nc * h * w;
                const T* src = go + nc * oh * ow;
                for (int y = 0; y < oh; ++y)
                    for (int xx = 0; xx < ow; ++xx) {
                        T v = src[y * ow + xx] * T(0.25);
                        T* d = dst + (2 * y) * w + 2 * xx;
                        d[0] += v;
                        d[1] += v;
                        d[w] += v;
                        d[w + 1] += v;
                    }
            }
        });
    }
    return out;
}

// out = a * (1 - m) + b * m with m in {0,1}, shape [N,1,H,W], broadcast over
// channels. m carries no gradient.
template <class T>
Tensor<T> masked_blend(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b,
                       const Tensor<T>& m) {
    require_same_shape("masked_blend", a, b);
    if (a.shape().size() != 4 || m.shape().size() != 4 || m.dim(1) != 1 ||
        m.dim(0) != a.dim(0) || m.dim(2) != a.dim(2) || m.dim(3) != a.dim(3))
        throw std::invalid_argument("masked_blend: mask " + shape_str(m.shape()) +
                                    " incompatible with input " + shape_str(a.shape()));
    int n = a.dim(0), c = a.dim(1);
    int64_t hw = (int64_t)a.dim(2) * a.dim(3);
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    const T* pm = m.data().data();
    T* po = out.data().data();
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
            int64_t base = ((int64_t)i * c + ch) * hw;
            const T* mm = pm + (int64_t)i * hw;
            for (int64_t j = 0; j < hw; ++j)
                po[base + j] = pa[base + j] * (T(1) - mm[j]) + pb[base + j] * mm[j];
        }
    if (want_grad(tape, {&a, &b})) {
        tape->adopt(out);
        Tensor<T> ac = a, bc = b, mc = m, oc = out;
        tape->record([ac, bc, mc, oc, n, c, hw]() mutable {
            const T* go = oc.grad().data();
            const T* pm2 = mc.data().data();
            for (int i = 0; i < n; ++i)
                for (int ch = 0; ch < c; ++ch) {
                    int64_t base = ((int64_t)i * c + ch) * hw;
                    const T* mm = pm2 + (int64_t)i * hw;
                    if (ac.requires_grad()) {
                        T* ga = ac.grad().data();
                        for (int64_t j = 0; j < hw; ++j)
                            ga[base + j] += go[base + j] * (T(1) - mm[j]);
                    }
                    if (bc.requires_grad()) {
                        T* gb = bc.grad().data();
                        for (int64_t j = 0; j < hw; ++j)
                            gb[base + j] += go[base + j] * mm[j];
                    }
                }
        });
    }
    return out;
}

// out[n,c,h,w] = x[n,c,h,w] + bias[n,c]
template <class T>
Tensor<T> add_channel_bias(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& bias) {
    if (x.shape().size() != 4 || bias.shape().size() != 2 ||
        bias.dim(0) != x.dim(0) || bias.dim(1) != x.dim(1))
        throw std::invalid_argument("add_channel_bias: bias " + shape_str(bias.shape()) +
                                    " incompatible with input " + shape_str(x.shape()));
    int n = x.dim(0), c = x.dim(1);
    int64_t hw = (int64_t)x.dim(2) * x.dim(3);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data().data();
    const T* pb = bias.data().data();
    T* po = out.data().data();
    for (int64_t nc = 0; nc < (int64_t)n * c; ++nc) {
        T bv = pb[nc];
        const T* src = px + nc * hw;
        T* dst = po + nc * hw;
        for (int64_t j = 0; j < hw; ++j) dst[j] = src[j] + bv;
    }
    if (want_grad(tape, {&x, &bias})) {
        tape->adopt(out);
        Tensor<T> xc = x, bc = bias, oc = out;
        tape->record([xc, bc, oc, n, c, hw]() mutable {
            const T* go = oc.grad().data();
            if (xc.requires_grad()) {
                T* gx = xc.grad().data();
                for (int64_t i = 0; i < xc.numel(); ++i) gx[i] += go[i];
            }
            if (bc.requires_grad()) {
                T* gb = bc.grad().data();
                for (int64_t nc2 = 0; nc2 < (int64_t)n * c; ++nc2) {
                    T acc = 0;
                    const T* src = go + nc2 * hw;
                    for (int64_t j = 0; j < hw; ++j) acc += src[j];
                    gb[nc2] += acc;
                }
            }
        });
    }
    return out;
}

// Gathers rows of an embedding table: out[i] = table[rows[i]].
template <class T>
Tensor<T> embedding_rows(Tape<T>* tape, const Tensor<T>& table,
                         const std::vector<int>& rows) {
    if (table.shape().size() != 2)
        throw std::invalid_argument("embedding_rows: table must be 2-d, got " +
                                    shape_str(table.shape()));
    int r = table.dim(0), d = table.dim(1);
    for (int idx : rows)
        if (idx < 0 || idx >= r)
            throw std::invalid_argument("embedding_rows: row " + std::to_string(idx) +
                                        " out of range [0," + std::to_string(r) + ")");
    int n = (int)rows.size();
    Tensor<T> out = Tensor<T>::zeros({n, d});
    for (int i = 0; i < n; ++i)
        std::memcpy(out.data().data() + (int64_t)i * d,
                    table.data().data() + (int64_t)rows[i] * d, sizeof(T) * d);
    if (want_grad(tape, {&table})) {
        tape->adopt(out);
        Tensor<T> tc = table, oc = out;
        std::vector<int> rc = rows;
        tape->record([tc, oc, rc, d]() mutable {
            if (!tc.requires_grad()) return;
            T* gt = tc.grad().data();
            const T* go = oc.grad().data();
            for (size_t i = 0; i < rc.size(); ++i) {
                T* dst = gt + (int64_t)rc[i] * d;
                const T* src = go + (int64_t)i * d;
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& b) {
    if (x.shape().size() != 2 || w.shape().size() != 2 || x.dim(1) != w.dim(1))
        throw std::invalid_argument("linear: input " + shape_str(x.shape()) +
                                    " incompatible with weight " + shape_str(w.shape()));
    if (b.shape().size() != 1 || b.dim(0) != w.dim(0))
        throw std::invalid_argument("linear: bias " + shape_str(b.shape()) +
                                    " incompatible with weight " + shape_str(w.shape()));
    int n = x.dim(0), in = x.dim(1), out_f = w.dim(0);
    Tensor<T> out = Tensor<T>::zeros({n, out_f});
    gemm<T>(MatOp::none, MatOp::transpose, n, out_f, in, T(1), x.data().data(), in,
            w.data().data(), in, T(0), out.data().data(), out_f);
    T* po = out.data().data();
    const T* pb = b.data().data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < out_f; ++j) po[(int64_t)i * out_f + j] += pb[j];
    if (want_grad(tape, {&x, &w, &b})) {
        tape->adopt(out);
        Tensor<T> xc = x, wc = w, bc = b, oc = out;
        tape->record([xc, wc, bc, oc, n, in, out_f]() mutable {
            const T* go = oc.grad().data();
            if (xc.requires_grad())
                gemm<T>(MatOp::none, MatOp::none, n, in, out_f, T(1), go, out_f,
                        wc.data().data(), in, T(1), xc.grad().data(), in);
            if (wc.requires_grad())
                gemm<T>(MatOp::transpose, MatOp::none, out_f, in, n, T(1), go, out_f,
                        xc.data().data(), in, T(1), wc.grad().data(), in);
            if (bc.requires_grad()) {
                T* gb = bc.grad().data();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < out_f; ++j) gb[j] += go[(int64_t)i * out_f + j];
            }
        });
    }
    maybe_check_finite(out, "linear");
    return out;
}

// ---------------------------------------------------------------------------
// conv2d (im2col + gemm; stride 1 or 2, "same" zero padding at stride 1)
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int pad, int oh,
            int ow, T* col, int64_t col_stride, int64_t col_offset) {
    // col[(cc*k+ky)*k+kx][col_offset + oy*ow+ox] = x[cc, oy*stride+ky-pad, ox*stride+kx-pad]
    for (int cc = 0; cc < c; ++cc)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                T* dst_row = col + ((int64_t)(cc * k + ky) * k + kx) * col_stride + col_offset;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ky - pad;
                    T* dst = dst_row + (int64_t)oy * ow;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + ow, T(0));
                        continue;
                    }
                    const T* src = x + ((int64_t)cc * h + iy) * w;
                    if (stride == 1) {
                        int ox_lo = std::max(0, pad - kx);
                        int ox_hi = std::min(ow, w + pad - kx);  // exclusive
                        for (int ox = 0; ox < ox_lo; ++ox) dst[ox] = T(0);
                        if (ox_hi > ox_lo)
                            std::memcpy(dst + ox_lo, src + ox_lo + kx - pad,
                                        sizeof(T) * (ox_hi - ox_lo));
                        for (int ox = ox_hi; ox < ow; ++ox) dst[ox] = T(0);
                    } else {
                        for (int ox = 0; ox < ow; ++ox) {
                            int ix = ox * stride + kx - pad;
                            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                        }
                    }
                }
            }
}

template <class T>
void col2im_add(const T* col, int c, int h, int w, int k, int stride, int pad,
                int oh, int ow, T* gx, int64_t col_stride, int64_t col_offset) {
    for (int cc = 0; cc < c; ++cc)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const T* src_row =
                    col + ((int64_t)(cc * k + ky) * k + kx) * col_stride + col_offset;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    const T* src = src_row + (int64_t)oy * ow;
                    T* dst = gx + ((int64_t)cc * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
}

}  // namespace detail

template <class T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& b, int stride = 1) {
    if (x.shape().size() != 4 || w.shape().size() != 4)
        throw std::invalid_argument("conv2d: expected NCHW input and OIHW weight, got " +
                                    shape_str(x.shape()) + " and " + shape_str(w.shape()));
    if (x.dim(1) != w.dim(1))
        throw std::invalid_argument("conv2d: channel mismatch: input " +
                                    shape_str(x.shape()) + " vs weight " +
                                    shape_str(w.shape()));
    if (w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0)
        throw std::invalid_argument("conv2d: kernel must be odd square, got " +
                                    shape_str(w.shape()));
    if (stride != 1 && stride != 2)
        throw std::invalid_argument("conv2d: stride must be 1 or 2, got " +
                                    std::to_string(stride));
    if (b.shape().size() != 1 || b.dim(0) != w.dim(0))
        throw std::invalid_argument("conv2d: bias " + shape_str(b.shape()) +
                                    " incompatible with weight " + shape_str(w.shape()));
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), ww = x.dim(3);
    int oc = w.dim(0), k = w.dim(2);
    int pad = (k - 1) / 2;
    int oh = (h + 2 * pad - k) / stride + 1;
    int ow = (ww + 2 * pad - k) / stride + 1;
    int64_t ohw = (int64_t)oh * ow;
    int64_t ckk = (int64_t)c * k * k;
    int64_t cols = (int64_t)n * ohw;

    auto col = std::make_shared<std::vector<T>>(ckk * cols);
    for (int i = 0; i < n; ++i)
        detail::im2col<T>(x.data().data() + (int64_t)i * c * h * ww, c, h, ww, k,
                          stride, pad, oh, ow, col->data(), cols, i * ohw);

    // y_flat[oc][n*ohw + o], then scatter to NCHW with bias.
    std::vector<T> y_flat((int64_t)oc * cols);
    gemm<T>(MatOp::none, MatOp::none, oc, (int)cols, (int)ckk, T(1),
            w.data().data(), (int)ckk, col->data(), (int)cols, T(0), y_flat.data(),
            (int)cols);
    Tensor<T> out = Tensor<T>::zeros({n, oc, oh, ow});
    T* po = out.data().data();
    const T* pb = b.data().data();
    for (int i = 0; i < n; ++i)
        for (int ocb = 0; ocb < oc; ++ocb) {
            const T* src = y_flat.data() + (int64_t)ocb * cols + (int64_t)i * ohw;
            T* dst = po + ((int64_t)i * oc + ocb) * ohw;
            T bv = pb[ocb];
            for (int64_t j = 0; j < ohw; ++j) dst[j] = src[j] + bv;
        }

    if (want_grad(tape, {&x, &w, &b})) {
        tape->adopt(out);
        Tensor<T> xc = x, wc = w, bc = b, oc_t = out;
        tape->record([xc, wc, bc, oc_t, col, n, c, h, ww, oc, k, stride, pad, oh, ow,
                      ohw, ckk, cols]() mutable {
            // transpose grad to [oc, n*ohw]
            std::vector<T> gy((int64_t)oc * cols);
            const T* go = oc_t.grad().data();
            for (int i = 0; i < n; ++i)
                for (int ocb = 0; ocb < oc; ++ocb)
                    std::memcpy(gy.data() + (int64_t)ocb * cols + (int64_t)i * ohw,
                                go + ((int64_t)i * oc + ocb) * ohw, sizeof(T) * ohw);
            if (bc.requires_grad()) {
                T* gb = bc.grad().data();
                for (int ocb = 0; ocb < oc; ++ocb) {
                    T acc = 0;
                    const T* src = gy.data() + (int64_t)ocb * cols;
                    for (int64_t j = 0; j < cols; ++j) acc += src[j];
                    gb[ocb] += acc;
                }
            }
            if (wc.requires_grad())
                gemm<T>(MatOp::none, MatOp::transpose, oc, (int)ckk, (int)cols, T(1),
                        gy.data(), (int)cols, col->data(), (int)cols, T(1),
                        wc.grad().data(), (int)ckk);
            if (xc.requires_grad()) {
                std::vector<T> gcol(ckk * cols);
                gemm<T>(MatOp::transpose, MatOp::none, (int)ckk, (int)cols, oc, T(1),
                        wc.data().data(), (int)ckk, gy.data(), (int)cols, T(0),
                        gcol.data(), (int)cols);
                for (int i = 0; i < n; ++i)
                    detail::col2im_add<T>(gcol.data(), c, h, ww, k, stride, pad, oh, ow,
                                          xc.grad().data() + (int64_t)i * c * h * ww,
                                          cols, i * ohw);
            }
        });
    }
    maybe_check_finite(out, "conv2d");
    return out;
}

// ---------------------------------------------------------------------------
// group normalization
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> group_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, int groups) {
    if (x.shape().size() != 4)
        throw std::invalid_argument("group_norm: expected NCHW, got " +
                                    shape_str(x.shape()));
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (groups <= 0 || c % groups != 0)
        throw std::invalid_argument("group_norm: channels " + std::to_string(c) +
                                    " not divisible by groups " + std::to_string(groups));
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
        throw std::invalid_argument("group_norm: affine params " +
                                    shape_str(gamma.shape()) + " incompatible with " +
                                    shape_str(x.shape()));
    const T eps = (T)1e-5;
    int gs = c / groups;
    int64_t hw = (int64_t)h * w;
    int64_t m = gs * hw;  // elements per group

    Tensor<T> out = Tensor<T>::zeros(x.shape());
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto inv_std = std::make_shared<std::vector<T>>((int64_t)n * groups);

    const T* px = x.data().data();
    const T* pg = gamma.data().data();
    const T* pbt = beta.data().data();
    T* po = out.data().data();
    for (int i = 0; i < n; ++i)
        for (int g = 0; g < groups; ++g) {
            int64_t base = ((int64_t)i * c + (int64_t)g * gs) * hw;
            T mean = 0;
            for (int64_t j = 0; j < m; ++j) mean += px[base + j];
            mean /= (T)m;
            T var = 0;
            for (int64_t j = 0; j < m; ++j) {
                T d = px[base + j] - mean;
                var += d * d;
            }
            var /= (T)m;
            T inv = T(1) / std::sqrt(var + eps);
            (*inv_std)[(int64_t)i * groups + g] = inv;
            for (int ch = 0; ch < gs; ++ch) {
                int cidx = g * gs + ch;
                int64_t off = base + (int64_t)ch * hw;
                for (int64_t j = 0; j < hw; ++j) {
                    T xh = (px[off + j] - mean) * inv;
                    (*xhat)[off + j] = xh;
                    po[off + j] = pg[cidx] * xh + pbt[cidx];
                }
            }
        }

    if (want_grad(tape, {&x, &gamma, &beta})) {
        tape->adopt(out);
        Tensor<T> xc = x, gc = gamma, bc = beta, oc = out;
        tape->record([xc, gc, bc, oc, xhat, inv_std, n, c, groups, gs, hw, m]() mutable {
            const T* go = oc.grad().data();
            const T* pg2 = gc.data().data();
            for (int i = 0; i < n; ++i)
                for (int g = 0; g < groups; ++g) {
                    int64_t base = ((int64_t)i * c + (int64_t)g * gs) * hw;
                    T inv = (*inv_std)[(int64_t)i * groups + g];
                    if (gc.requires_grad() || bc.requires_grad()) {
                        for (int ch = 0; ch < gs; ++ch) {
                            int cidx = g * gs + ch;
                            int64_t off = base + (int64_t)ch * hw;
                            T sg = 0, sb = 0;
                            for (int64_t j = 0; j < hw; ++j) {
                                sg += go[off + j] * (*xhat)[off + j];
                                sb += go[off + j];
                            }
                            if (gc.requires_grad()) gc.grad()[cidx] += sg;
                            if (bc.requires_grad()) bc.grad()[cidx] += sb;
                        }
                    }
                    if (xc.requires_grad()) {
                        T s1 = 0, s2 = 0;
                        for (int ch = 0; ch < gs; ++ch) {
                            int cidx = g * gs + ch;
                            int64_t off = base + (int64_t)ch * hw;
                            for (int64_t j = 0; j < hw; ++j) {
                                T dxh = go[off + j] * pg2[cidx];
                                s1 += dxh;
                                s2 += dxh * (*xhat)[off + j];
                            }
                        }
                        s1 /= (T)m;
                        s2 /= (T)m;
                        T* gx = xc.grad().data();
                        for (int ch = 0; ch < gs; ++ch) {
                            int cidx = g * gs + ch;
                            int64_t off = base + (int64_t)ch * hw;
                            for (int64_t j = 0; j < hw; ++j) {
                                T dxh = go[off + j] * pg2[cidx];
                                gx[off + j] += inv * (dxh - s1 - (*xhat)[off + j] * s2);
                            }
                        }
                    }
                }
        });
    }
    maybe_check_finite(out, "group_norm");
    return out;
}

}  // namespace bldlab
