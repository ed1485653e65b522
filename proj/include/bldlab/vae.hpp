#pragma once

#include <type_traits>

#include "bldlab/nn.hpp"

namespace bldlab {

// Convolutional VAE with a fixed 4x downsample (two stride-2 stages) and a
// tanh-squashed decoder. Encoder heads emit per-cell mean and logvar.
template <class T>
struct VaeModel {
    int c1 = 32;
    int c2 = 64;
    int latent_channels = 4;
    int groups = 8;
    static constexpr int factor = 4;

    ParameterSet<T> params;

    Conv<T> enc_conv1, enc_conv2, enc_conv3, enc_mean, enc_logvar;
    Norm<T> enc_gn1, enc_gn2, enc_gn3;
    Conv<T> dec_conv1, dec_conv2, dec_conv3, dec_out;
    Norm<T> dec_gn1, dec_gn2, dec_gn3;

    static VaeModel build(int c1, int c2, int latent_channels, uint64_t init_seed) {
        VaeModel m;
        m.c1 = c1;
        m.c2 = c2;
        m.latent_channels = latent_channels;
        if (c1 % m.groups != 0 || c2 % m.groups != 0)
            throw std::invalid_argument("vae: widths must be divisible by " +
                                        std::to_string(m.groups) + " norm groups");
        Rng rng(derive_seed(init_seed, "vae-init"));
        auto& ps = m.params;
        m.enc_conv1 = make_conv(ps, "enc.conv1", 3, c1, 3, 2, rng);
        m.enc_gn1 = make_norm(ps, "enc.gn1", c1, m.groups);
        m.enc_conv2 = make_conv(ps, "enc.conv2", c1, c2, 3, 2, rng);
        m.enc_gn2 = make_norm(ps, "enc.gn2", c2, m.groups);
        m.enc_conv3 = make_conv(ps, "enc.conv3", c2, c2, 3, 1, rng);
        m.enc_gn3 = make_norm(ps, "enc.gn3", c2, m.groups);
        m.enc_mean = make_conv(ps, "enc.mean", c2, latent_channels, 1, 1, rng);
        m.enc_logvar = make_conv(ps, "enc.logvar", c2, latent_channels, 1, 1, rng);

        m.dec_conv1 = make_conv(ps, "dec.conv1", latent_channels, c2, 3, 1, rng);
        m.dec_gn1 = make_norm(ps, "dec.gn1", c2, m.groups);
        m.dec_conv2 = make_conv(ps, "dec.conv2", c2, c2, 3, 1, rng);
        m.dec_gn2 = make_norm(ps, "dec.gn2", c2, m.groups);
        m.dec_conv3 = make_conv(ps, "dec.conv3", c2, c1, 3, 1, rng);
        m.dec_gn3 = make_norm(ps, "dec.gn3", c1, m.groups);
        m.dec_out = make_conv(ps, "dec.out", c1, 3, 3, 1, rng);
        return m;
    }

    bool is_encoder_param(const std::string& name) const {
        return name.rfind("enc.", 0) == 0;
    }

    struct Moments {
        Tensor<T> mean;
        Tensor<T> logvar;
    };

    Moments encode_moments(Tape<T>* tape, const Tensor<T>& x) const {
        validate_image_input(x);
        auto h = silu(tape, enc_gn1(tape, enc_conv1(tape, x)));
        h = silu(tape, enc_gn2(tape, enc_conv2(tape, h)));
        h = silu(tape, enc_gn3(tape, enc_conv3(tape, h)));
        return {enc_mean(tape, h), enc_logvar(tape, h)};
    }

    // sample off: the mean. sample on: mean + exp(logvar/2) * eps.
    Tensor<T> encode(Tape<T>* tape, const Tensor<T>& x, bool sample, Rng* rng) const {
        Moments m = encode_moments(tape, x);
        if (!sample) return m.mean;
        if (!rng) throw std::invalid_argument("encode: sampling requires an rng");
        Tensor<T> eps = Tensor<T>::randn(m.mean.shape(), *rng);
        auto std_dev = exp_op(tape, scale(tape, m.logvar, T(0.5)));
        return add(tape, m.mean, mul(tape, std_dev, eps));
    }

    Tensor<T> decode(Tape<T>* tape, const Tensor<T>& z) const {
        if (z.shape().size() != 4 || z.dim(1) != latent_channels)
            throw std::invalid_argument("decode: expected latent with " +
                                        std::to_string(latent_channels) +
                                        " channels, got " + shape_str(z.shape()));
        auto h = silu(tape, dec_gn1(tape, dec_conv1(tape, z)));
        h = silu(tape, dec_gn2(tape, dec_conv2(tape, h)));
        h = nearest_upsample2x(tape, h);
        h = silu(tape, dec_gn3(tape, dec_conv3(tape, h)));
        h = nearest_upsample2x(tape, h);
        return tanh_op(tape, dec_out(tape, h));
    }

    // D(E(x) * (1 - m^latent) + E(x * m) * m^latent), both encoder passes in
    // mean mode over the same weights. mask_px: [N,1,H,W], mask_latent:
    // [N,1,H/4,W/4], values in {0,1}.
    Tensor<T> blended_reconstruct(Tape<T>* tape, const Tensor<T>& x,
                                  const Tensor<T>& mask_px,
                                  const Tensor<T>& mask_latent) const {
        validate_image_input(x);
        if (mask_px.shape().size() != 4 || mask_px.dim(0) != x.dim(0) ||
            mask_px.dim(2) != x.dim(2) || mask_px.dim(3) != x.dim(3))
            throw std::invalid_argument("blended_reconstruct: pixel mask " +
                                        shape_str(mask_px.shape()) +
                                        " inconsistent with image " + shape_str(x.shape()));
        if (mask_latent.shape().size() != 4 || mask_latent.dim(2) != x.dim(2) / factor ||
            mask_latent.dim(3) != x.dim(3) / factor)
            throw std::invalid_argument("blended_reconstruct: latent mask " +
                                        shape_str(mask_latent.shape()) +
                                        " inconsistent with image " + shape_str(x.shape()));
        Tensor<T> zeros = Tensor<T>::zeros(x.shape());
        Tensor<T> x_masked = masked_blend(tape, zeros, x, mask_px);  // x * m
        Tensor<T> z_full = encode(tape, x, false, nullptr);
        Tensor<T> z_masked = encode(tape, x_masked, false, nullptr);
        Tensor<T> blended = masked_blend(tape, z_full, z_masked, mask_latent);
        return decode(tape, blended);
    }

private:
    void validate_image_input(const Tensor<T>& x) const {
        if (x.shape().size() != 4 || x.dim(1) != 3 || x.dim(2) % factor != 0 ||
            x.dim(3) % factor != 0)
            throw std::invalid_argument(
                "encode: expected [N,3,H,W] with H,W divisible by 4, got " +
                shape_str(x.shape()));
        for (T v : x.data())
            if (v < T(-1.0001) || v > T(1.0001))
                throw std::invalid_argument(
                    "encode: pixel values must lie in [-1,1], found " +
                    std::to_string((double)v));
    }
};

template <class T>
struct VaeTrainConfig {
    T recon_weight = T(1);
    T kl_weight = (T)1e-6;
    bool blend_objective = false;
};

template <class T>
struct VaeLossParts {
    Tensor<T> total;
    double recon = 0;
    double kl = 0;
};

// Plain mode reconstructs through a sampled latent; blend mode reconstructs
// through the mean-mode blended latent. KL is always taken on the full-image
// moments.
template <class T>
VaeLossParts<T> vae_loss(std::type_identity_t<Tape<T>*> tape, const VaeModel<T>& model,
                         const Tensor<T>& x, std::type_identity_t<const Tensor<T>*> mask_px,
                         std::type_identity_t<const Tensor<T>*> mask_latent,
                         const VaeTrainConfig<T>& cfg, Rng* rng) {
    typename VaeModel<T>::Moments moments = model.encode_moments(tape, x);
    Tensor<T> recon;
    if (cfg.blend_objective) {
        if (!mask_px || !mask_latent)
            throw std::invalid_argument("vae_loss: blend objective requires a mask pair");
        // same composition as blended_reconstruct, reusing the full-image pass
        Tensor<T> zeros = Tensor<T>::zeros(x.shape());
        Tensor<T> x_masked = masked_blend(tape, zeros, x, *mask_px);
        Tensor<T> z_masked = model.encode(tape, x_masked, false, nullptr);
        Tensor<T> blended = masked_blend(tape, moments.mean, z_masked, *mask_latent);
        recon = model.decode(tape, blended);
    } else {
        Tensor<T> z = moments.mean;
        if (rng) {
            Tensor<T> eps = Tensor<T>::randn(moments.mean.shape(), *rng);
            auto std_dev = exp_op(tape, scale(tape, moments.logvar, T(0.5)));
            z = add(tape, moments.mean, mul(tape, std_dev, eps));
        }
        recon = model.decode(tape, z);
    }
    Tensor<T> recon_term = mse(tape, recon, x);
    Tensor<T> kl_term = kl_normal(tape, moments.mean, moments.logvar);
    Tensor<T> total = add(tape, scale(tape, recon_term, cfg.recon_weight),
                          scale(tape, kl_term, cfg.kl_weight));
    return {total, (double)recon_term.item(), (double)kl_term.item()};
}

struct VaeStepReport {
    double recon = 0;
    double kl = 0;
    double total = 0;
};

// One Adam update against the blend-mode objective (or plain mode when the
// config says so).
template <class T>
VaeStepReport vae_train_step(VaeModel<T>& model, ParameterSet<T>& trainable,
                             AdamState<T>& opt, const Tensor<T>& x_batch,
                             std::type_identity_t<const Tensor<T>*> mask_px,
                             std::type_identity_t<const Tensor<T>*> mask_latent,
                             const VaeTrainConfig<T>& cfg, Rng* rng) {
    Tape<T> tape;
    auto parts = vae_loss(&tape, model, x_batch, mask_px, mask_latent, cfg, rng);
    trainable.zero_grad();
    tape.backward(parts.total);
    adam_step(trainable, opt);
    trainable.zero_grad();
    double total = parts.total.item();
    tape.clear();
    return {parts.recon, parts.kl, total};
}

}  // namespace bldlab
