#pragma once

#include "bldlab/schedule.hpp"
#include "bldlab/unet.hpp"

namespace bldlab {

enum class TrainMode { standard, two_step };

struct TrainConfig {
    TrainMode mode = TrainMode::standard;
    double lambda = 0.5;
    double lr = 2e-4;
    int batch = 4;
    int steps = 5000;
    double cond_dropout = 0.1;
    uint64_t seed = 0;
};

struct LossReport {
    int step = 0;
    int t = 0;
    double l1 = 0;
    double l2 = 0;
    bool has_l2 = false;
    double combined = 0;
};

// Uniform over [1,T] in standard mode; [2,T] in two-step mode, since the
// true-noise recovery divides by sqrt(1 - alpha_bar(t-1)) which vanishes at
// t = 1.
inline int sample_timestep(TrainMode mode, Rng& rng, int t_max) {
    int lo = mode == TrainMode::two_step ? 2 : 1;
    return (int)rng.uniform_int(lo, t_max);
}

// predict: (tape, z, t, cond_rows) -> v_hat
template <class T>
using VPredictor = std::function<Tensor<T>(Tape<T>*, const Tensor<T>&, int,
                                           const std::vector<int>&)>;

template <class T>
struct StandardLoss {
    Tensor<T> l1;
    Tensor<T> v_hat;
    Tensor<T> z_t;
};

template <class T>
StandardLoss<T> standard_v_loss(const VPredictor<T>& predict, const NoiseSchedule& ns,
                                Tape<T>* tape, const Tensor<T>& z0,
                                const std::vector<int>& cond_rows, int t,
                                const Tensor<T>& eps1) {
    Tensor<T> z_t = forward_diffuse(ns, z0, eps1, t);
    Tensor<T> v1 = v_target(ns, z0, eps1, t);
    Tensor<T> v_hat = predict(tape, z_t, t, cond_rows);
    Tensor<T> l1 = mse(tape, v_hat, v1);
    return {l1, v_hat, z_t};
}

template <class T>
struct TwoStepLoss {
    Tensor<T> l1;
    Tensor<T> l2;
    Tensor<T> z0_hat_blended;  // recovered z0 after the blending operation
    Tensor<T> z_prev;          // re-noised input of the second prediction
    Tensor<T> eps2_star;       // true noise explaining z_prev relative to z0
    Tensor<T> v2;              // second-step target
};

// Two-step training paradigm: after the standard prediction, recover z0_hat,
// blend it with the masked latent, re-noise to t-1, derive the true noise
// that explains the blended latent relative to the real z0, and train the
// second prediction against the matching v. The second input is a constant
// (no gradient flows back into the first prediction).
template <class T>
TwoStepLoss<T> two_step_loss(const VPredictor<T>& predict, const NoiseSchedule& ns,
                             Tape<T>* tape, const Tensor<T>& z0,
                             const Tensor<T>& z0_masked, const Tensor<T>& mask_latent,
                             const std::vector<int>& cond_rows, int t,
                             const Tensor<T>& eps1, const Tensor<T>& eps2) {
    if (t < 2)
        throw std::invalid_argument(
            "two_step_loss: t = " + std::to_string(t) +
            " but the true-noise step needs t >= 2 (alpha_bar(0) = 1)");
    require_shapes_match("two_step_loss", z0, z0_masked);
    require_shapes_match("two_step_loss", z0, eps2);

    StandardLoss<T> first = standard_v_loss(predict, ns, tape, z0, cond_rows, t, eps1);

    // detached reconstruction of the next-step latent (Alg. steps 4-8)
    Tensor<T> z0_hat = recover_z0(ns, first.z_t, first.v_hat.detach(), t);
    Tensor<T> blended = masked_blend<T>(nullptr, z0_hat, z0_masked, mask_latent);
    Tensor<T> z_prev = forward_diffuse(ns, blended, eps2, t - 1);

    double sa = ns.sqrt_alpha_bar(t - 1);
    double sb = ns.sqrt_one_minus_alpha_bar(t - 1);
    // eps2* = (z_prev - sqrt(abar_{t-1}) z0) / sqrt(1 - abar_{t-1})
    Tensor<T> eps2_star = detail::combine2(z_prev, 1.0 / sb, z0, -sa / sb);
    // v2 = sqrt(abar_{t-1}) eps2* - sqrt(1 - abar_{t-1}) z0
    Tensor<T> v2 = detail::combine2(eps2_star, sa, z0, -sb);

    if (debug_checks()) {
        // the true-noise step inverts the re-noising step exactly
        Tensor<T> rebuilt = detail::combine2(z0, sa, eps2_star, sb);
        for (int64_t i = 0; i < z_prev.numel(); ++i)
            if (std::abs((double)rebuilt.data()[i] - (double)z_prev.data()[i]) > 1e-6)
                throw std::runtime_error(
                    "two_step_loss: noise/recovery inversion identity violated");
    }

    Tensor<T> v_hat2 = predict(tape, z_prev, t - 1, cond_rows);
    Tensor<T> l2 = mse(tape, v_hat2, v2);
    return {first.l1, l2, blended, z_prev, eps2_star, v2};
}

template <class T>
struct DenoiserBatch {
    Tensor<T> z0;          // [N, C, h, w]
    Tensor<T> z0_masked;   // [N, C, h, w]
    Tensor<T> mask_latent; // [N, 1, h, w]
    std::vector<int> classes;
};

// One optimization step. Randomness order per step: timestep, eps1, eps2
// (two-step only), then one condition-dropout draw per sample.
template <class T>
LossReport train_step(const VPredictor<T>& predict, ParameterSet<T>& params,
                      AdamState<T>& opt, const NoiseSchedule& ns,
                      const DenoiserBatch<T>& batch, const TrainConfig& cfg,
                      int step_index, int null_row, Rng& rng) {
    int t = sample_timestep(cfg.mode, rng, ns.steps());
    Tensor<T> eps1 = Tensor<T>::randn(batch.z0.shape(), rng);
    Tensor<T> eps2;
    if (cfg.mode == TrainMode::two_step)
        eps2 = Tensor<T>::randn(batch.z0.shape(), rng);
    std::vector<int> rows(batch.classes.size());
    for (size_t i = 0; i < rows.size(); ++i)
        rows[i] = rng.uniform() < cfg.cond_dropout ? null_row : batch.classes[i];

    Tape<T> tape;
    LossReport report;
    report.step = step_index;
    report.t = t;
    Tensor<T> combined;
    if (cfg.mode == TrainMode::two_step) {
        auto losses = two_step_loss(predict, ns, &tape, batch.z0, batch.z0_masked,
                                    batch.mask_latent, rows, t, eps1, eps2);
        combined = add(&tape, losses.l1, scale(&tape, losses.l2, (T)cfg.lambda));
        report.l1 = losses.l1.item();
        report.l2 = losses.l2.item();
        report.has_l2 = true;
    } else {
        auto loss = standard_v_loss(predict, ns, &tape, batch.z0, rows, t, eps1);
        combined = loss.l1;
        report.l1 = loss.l1.item();
    }
    report.combined = combined.item();
    params.zero_grad();
    tape.backward(combined);
    adam_step(params, opt);
    params.zero_grad();
    tape.clear();
    return report;
}

// Wraps a UNet into the trainer's predictor interface, assembling the
// 9-channel input when the model was built with mask conditioning.
template <class T>
VPredictor<T> unet_predictor(const UNetModel<T>& model, const Tensor<T>* mask_latent,
                             const Tensor<T>* z0_masked) {
    if (model.in_channels == 4)
        return [&model](Tape<T>* tape, const Tensor<T>& z, int t,
                        const std::vector<int>& rows) {
            std::vector<int> ts((size_t)z.dim(0), t);
            return model.forward(tape, z, ts, rows);
        };
    if (!mask_latent || !z0_masked)
        throw std::invalid_argument(
            "unet_predictor: mask-conditioned model needs mask and masked latent");
    return [&model, mask_latent, z0_masked](Tape<T>* tape, const Tensor<T>& z, int t,
                                            const std::vector<int>& rows) {
        auto with_mask = concat_channels<T>(tape, z, *mask_latent);
        auto full = concat_channels<T>(tape, with_mask, *z0_masked);
        std::vector<int> ts((size_t)z.dim(0), t);
        return model.forward(tape, full, ts, rows);
    };
}

}  // namespace bldlab
