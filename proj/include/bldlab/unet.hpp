#pragma once

#include <type_traits>

#include "bldlab/nn.hpp"
#include "bldlab/schedule.hpp"

namespace bldlab {

// Splits a batch-2 tensor into its two batch-1 halves.
template <class T>
std::pair<Tensor<T>, Tensor<T>> split_batch2(const Tensor<T>& t) {
    if (t.shape().empty() || t.dim(0) != 2)
        throw std::invalid_argument("split_batch2: expected batch of 2, got " +
                                    shape_str(t.shape()));
    Shape s = t.shape();
    s[0] = 1;
    int64_t n = t.numel() / 2;
    Tensor<T> a = Tensor<T>::zeros(s), b = Tensor<T>::zeros(s);
    std::memcpy(a.data().data(), t.data().data(), sizeof(T) * n);
    std::memcpy(b.data().data(), t.data().data() + n, sizeof(T) * n);
    return {a, b};
}

// Class-id conditioning; the null condition selects a dedicated learned row
// used for classifier-free guidance.
struct Condition {
    int class_id = -1;

    static Condition null_cond() { return Condition{-1}; }
    bool is_null() const { return class_id < 0; }
};

template <class T>
struct ResBlock {
    Norm<T> gn1, gn2;
    Conv<T> conv1, conv2;
    Dense<T> time_proj;
    Conv<T> skip;
    bool project_skip = false;

    Tensor<T> operator()(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& emb) const {
        auto h = conv1(tape, silu(tape, gn1(tape, x)));
        h = add_channel_bias(tape, h, time_proj(tape, silu(tape, emb)));
        h = conv2(tape, silu(tape, gn2(tape, h)));
        return add(tape, h, project_skip ? skip(tape, x) : x);
    }
};

template <class T>
ResBlock<T> make_resblock(ParameterSet<T>& ps, const std::string& name, int in_c,
                          int out_c, int t_dim, int groups, Rng& rng) {
    ResBlock<T> rb;
    rb.gn1 = make_norm(ps, name + ".gn1", in_c, groups);
    rb.conv1 = make_conv(ps, name + ".conv1", in_c, out_c, 3, 1, rng);
    rb.time_proj = make_dense(ps, name + ".temb", t_dim, out_c, rng);
    rb.gn2 = make_norm(ps, name + ".gn2", out_c, groups);
    rb.conv2 = make_conv(ps, name + ".conv2", out_c, out_c, 3, 1, rng);
    rb.project_skip = in_c != out_c;
    if (rb.project_skip) rb.skip = make_conv(ps, name + ".skip", in_c, out_c, 1, 1, rng);
    return rb;
}

// Compact conditional U-Net over the 4-channel latent (three resolution
// levels with skip connections, timestep embedding injected at every
// residual block). An optional 9-channel input mode accepts the latent
// concatenated with the resized mask and the masked latent.
template <class T>
struct UNetModel {
    int in_channels = 4;
    int out_channels = 4;
    int w0 = 64, w1 = 128, w2 = 128;
    int t_sin_dim = 64;
    int t_dim = 128;
    int classes = 8;
    int max_timestep = 1000;
    int groups = 8;

    ParameterSet<T> params;

    Conv<T> conv_in;
    ResBlock<T> rb0, rb1, rb2, mid, up_rb2, up_rb1, up_rb0;
    Conv<T> down1, down2, up_conv1, up_conv0;
    Norm<T> out_gn;
    Conv<T> conv_out;
    Dense<T> t_mlp1, t_mlp2;
    Tensor<T> class_table;  // [classes + 1, t_dim], last row = null condition

    static UNetModel build(int w0, int w1, int w2, int classes, uint64_t init_seed,
                           bool mask_conditioning = false, int max_timestep = 1000) {
        UNetModel m;
        m.w0 = w0;
        m.w1 = w1;
        m.w2 = w2;
        m.t_dim = 2 * w0;
        m.classes = classes;
        m.max_timestep = max_timestep;
        m.in_channels = mask_conditioning ? 9 : 4;
        if (w0 % m.groups || w1 % m.groups || w2 % m.groups)
            throw std::invalid_argument("unet: widths must be divisible by " +
                                        std::to_string(m.groups) + " norm groups");
        Rng rng(derive_seed(init_seed, "unet-init"));
        auto& ps = m.params;
        m.t_mlp1 = make_dense(ps, "temb.mlp1", m.t_sin_dim, m.t_dim, rng);
        m.t_mlp2 = make_dense(ps, "temb.mlp2", m.t_dim, m.t_dim, rng);
        m.class_table = ps.add("cond.table",
                               kaiming_uniform<T>({classes + 1, m.t_dim}, m.t_dim, rng));
        m.conv_in = make_conv(ps, "in.conv", m.in_channels, w0, 3, 1, rng);
        m.rb0 = make_resblock(ps, "enc.rb0", w0, w0, m.t_dim, m.groups, rng);
        m.down1 = make_conv(ps, "enc.down1", w0, w1, 3, 2, rng);
        m.rb1 = make_resblock(ps, "enc.rb1", w1, w1, m.t_dim, m.groups, rng);
        m.down2 = make_conv(ps, "enc.down2", w1, w2, 3, 2, rng);
        m.rb2 = make_resblock(ps, "enc.rb2", w2, w2, m.t_dim, m.groups, rng);
        m.mid = make_resblock(ps, "mid.rb", w2, w2, m.t_dim, m.groups, rng);
        m.up_rb2 = make_resblock(ps, "dec.rb2", 2 * w2, w2, m.t_dim, m.groups, rng);
        m.up_conv1 = make_conv(ps, "dec.up1", w2, w1, 3, 1, rng);
        m.up_rb1 = make_resblock(ps, "dec.rb1", 2 * w1, w1, m.t_dim, m.groups, rng);
        m.up_conv0 = make_conv(ps, "dec.up0", w1, w0, 3, 1, rng);
        m.up_rb0 = make_resblock(ps, "dec.rb0", 2 * w0, w0, m.t_dim, m.groups, rng);
        m.out_gn = make_norm(ps, "out.gn", w0, m.groups);
        m.conv_out = make_conv(ps, "out.conv", w0, m.out_channels, 3, 1, rng);
        return m;
    }

    int condition_row(const Condition& c) const {
        if (c.is_null()) return classes;
        if (c.class_id >= classes)
            throw std::invalid_argument("condition: class id " +
                                        std::to_string(c.class_id) + " outside [0," +
                                        std::to_string(classes) + ")");
        return c.class_id;
    }

    // [N, t_sin_dim] sinusoidal features (constants, no grad).
    Tensor<T> sinusoidal_embedding(const std::vector<int>& ts) const {
        int half = t_sin_dim / 2;
        Tensor<T> out = Tensor<T>::zeros({(int)ts.size(), t_sin_dim});
        for (size_t i = 0; i < ts.size(); ++i)
            for (int j = 0; j < half; ++j) {
                double freq = std::exp(-std::log(10000.0) * (double)j / (double)half);
                double angle = (double)ts[i] * freq;
                out.data()[i * t_sin_dim + j] = (T)std::sin(angle);
                out.data()[i * t_sin_dim + half + j] = (T)std::cos(angle);
            }
        return out;
    }

    // Batched forward with per-sample timesteps and condition rows.
    Tensor<T> forward(Tape<T>* tape, const Tensor<T>& z, const std::vector<int>& ts,
                      const std::vector<int>& cond_rows) const {
        if (z.shape().size() != 4 || z.dim(1) != in_channels)
            throw std::invalid_argument("unet: expected input with " +
                                        std::to_string(in_channels) + " channels, got " +
                                        shape_str(z.shape()));
        if ((int)ts.size() != z.dim(0) || (int)cond_rows.size() != z.dim(0))
            throw std::invalid_argument("unet: timestep/condition count mismatch with batch " +
                                        std::to_string(z.dim(0)));
        for (int t : ts)
            if (t < 1 || t > max_timestep)
                throw std::invalid_argument("unet: timestep " + std::to_string(t) +
                                            " outside [1," + std::to_string(max_timestep) + "]");
        auto emb = t_mlp2(tape, silu(tape, t_mlp1(tape, sinusoidal_embedding(ts))));
        emb = add(tape, emb, embedding_rows(tape, class_table, cond_rows));

        auto e = conv_in(tape, z);
        auto h0 = rb0(tape, e, emb);
        auto h1 = rb1(tape, down1(tape, h0), emb);
        auto h2 = rb2(tape, down2(tape, h1), emb);
        auto m = mid(tape, h2, emb);
        auto u2 = up_rb2(tape, concat_channels(tape, m, h2), emb);
        auto x1 = up_conv1(tape, nearest_upsample2x(tape, u2));
        auto u1 = up_rb1(tape, concat_channels(tape, x1, h1), emb);
        auto x0 = up_conv0(tape, nearest_upsample2x(tape, u1));
        auto u0 = up_rb0(tape, concat_channels(tape, x0, h0), emb);
        return conv_out(tape, silu(tape, out_gn(tape, u0)));
    }
};

// Single-condition wrapper: v_hat for one (z_t, t, c) triple.
template <class T>
Tensor<T> predict_v(const UNetModel<T>& model, std::type_identity_t<Tape<T>*> tape,
                    const Tensor<T>& z_t, int t, const Condition& c) {
    std::vector<int> ts((size_t)z_t.dim(0), t);
    std::vector<int> rows((size_t)z_t.dim(0), model.condition_row(c));
    return model.forward(tape, z_t, ts, rows);
}

// Classifier-free guided prediction; conditional and null branches run as
// one batched forward.
template <class T>
Tensor<T> predict_v_guided(const UNetModel<T>& model, const Tensor<T>& z_t, int t,
                           const Condition& c, double scale) {
    if (z_t.dim(0) != 1)
        throw std::invalid_argument("predict_v_guided: expected batch of 1, got " +
                                    shape_str(z_t.shape()));
    Tensor<T> both = repeat_batch(z_t, 2);
    std::vector<int> ts = {t, t};
    std::vector<int> rows = {model.condition_row(c),
                             model.condition_row(Condition::null_cond())};
    Tensor<T> v = model.forward(nullptr, both, ts, rows);
    auto [v_cond, v_uncond] = split_batch2(v);
    return cfg_combine(v_cond, v_uncond, scale);
}

}  // namespace bldlab
