#include "bldlab/verify.hpp"

#include <cmath>
#include <sstream>

#include "bldlab/metrics.hpp"
#include "bldlab/pipeline.hpp"
#include "bldlab/trainer.hpp"

namespace bldlab {

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
}

VerifyCheck check_schedule_identities() {
    auto ns = NoiseSchedule::linear(1000);
    double worst32 = 0, worst64 = 0;
    Rng rng(1001);
    for (int trial = 0; trial < 1000; ++trial) {
        int t = (int)rng.uniform_int(1, 1000);
        auto z0 = Tensor<float>::randn({1, 4, 4, 4}, rng);
        auto eps = Tensor<float>::randn({1, 4, 4, 4}, rng);
        auto rec = recover_z0(ns, forward_diffuse(ns, z0, eps, t), v_target(ns, z0, eps, t), t);
        for (int64_t i = 0; i < z0.numel(); ++i)
            worst32 = std::max(worst32, std::abs((double)rec.data()[i] - z0.data()[i]));
        auto z0d = Tensor<double>::randn({1, 4, 4, 4}, rng);
        auto epsd = Tensor<double>::randn({1, 4, 4, 4}, rng);
        auto recd =
            recover_z0(ns, forward_diffuse(ns, z0d, epsd, t), v_target(ns, z0d, epsd, t), t);
        for (int64_t i = 0; i < z0d.numel(); ++i)
            worst64 = std::max(worst64, std::abs(recd.data()[i] - z0d.data()[i]));
    }
    bool mono = true;
    for (int t = 1; t <= 1000; ++t)
        if (!(ns.alpha_bar(t) < ns.alpha_bar(t - 1))) mono = false;
    bool pass = worst32 < 1e-5 && worst64 < 1e-12 && mono && ns.alpha_bar(0) == 1.0;
    return {"round-trip identity (forward/v/recover)", pass,
            "max err 32-bit " + fmt(worst32) + ", 64-bit " + fmt(worst64)};
}

VerifyCheck check_alg_identities() {
    auto ns = NoiseSchedule::linear(1000);
    Rng rng(1002);
    double worst_inv = 0, worst_blend = 0;
    auto zero_predict = [](Tape<float>*, const Tensor<float>& z, int,
                           const std::vector<int>&) { return Tensor<float>::zeros(z.shape()); };
    for (int trial = 0; trial < 200; ++trial) {
        int t = (int)rng.uniform_int(2, 1000);
        auto z0 = Tensor<float>::randn({1, 4, 4, 4}, rng);
        auto z0m = Tensor<float>::randn({1, 4, 4, 4}, rng);
        auto eps1 = Tensor<float>::randn({1, 4, 4, 4}, rng);
        auto eps2 = Tensor<float>::randn({1, 4, 4, 4}, rng);
        auto mask = Tensor<float>::zeros({1, 1, 4, 4});
        for (auto& v : mask.data()) v = rng.uniform() < 0.5 ? 1.0f : 0.0f;
        Tape<float> tape;
        auto r = two_step_loss<float>(zero_predict, ns, &tape, z0, z0m, mask, {0}, t, eps1,
                                      eps2);
        tape.clear();
        double sa = ns.sqrt_alpha_bar(t - 1), sb = ns.sqrt_one_minus_alpha_bar(t - 1);
        for (int64_t i = 0; i < z0.numel(); ++i) {
            double rebuilt = sa * z0.data()[i] + sb * r.eps2_star.data()[i];
            worst_inv = std::max(worst_inv, std::abs(rebuilt - r.z_prev.data()[i]));
        }
        auto blended_first = forward_diffuse(
            ns, masked_blend<float>(nullptr, z0, z0m, mask), eps2, t - 1);
        auto noised_first =
            masked_blend<float>(nullptr, forward_diffuse(ns, z0, eps2, t - 1),
                                forward_diffuse(ns, z0m, eps2, t - 1), mask);
        for (int64_t i = 0; i < z0.numel(); ++i)
            worst_blend = std::max(worst_blend,
                                   std::abs((double)blended_first.data()[i] -
                                            noised_first.data()[i]));
    }
    bool pass = worst_inv < 1e-6 && worst_blend < 1e-6;
    return {"two-step noise inversion and blend-order equivalence", pass,
            "inversion " + fmt(worst_inv) + ", blend-order " + fmt(worst_blend)};
}

VerifyCheck check_op_gradients() {
    Rng rng(1003);
    double worst = 0;
    for (int trial = 0; trial < 3; ++trial) {
        ParameterSet<double> params;
        params.add("x", Tensor<double>::randn({1, 4, 4, 4}, rng));
        params.add("w", Tensor<double>::randn({3, 4, 3, 3}, rng));
        params.add("b", Tensor<double>::randn({3}, rng));
        params.add("gamma", Tensor<double>::full({3}, 1.0));
        params.add("beta", Tensor<double>::zeros({3}));
        auto proj = Tensor<double>::randn({1, 3, 2, 2}, rng);
        auto rep = grad_check<double>(
            params,
            [&](Tape<double>& tape) {
                auto h = conv2d<double>(&tape, *params.find("x"), *params.find("w"),
                                        *params.find("b"), 1);
                h = group_norm<double>(&tape, h, *params.find("gamma"),
                                       *params.find("beta"), 1);
                h = silu<double>(&tape, h);
                h = avgpool2x<double>(&tape, h);
                h = mul<double>(&tape, h, proj);
                return sum<double>(&tape, h);
            },
            1e-5);
        worst = std::max(worst, (double)rep.max_rel_err);
    }
    return {"op gradients vs central differences (64-bit)", worst < 1e-4,
            "max rel err " + fmt(worst)};
}

VerifyCheck check_model_gradients() {
    double worst = 0;
    {
        auto vae = VaeModel<double>::build(8, 16, 4, 4001);
        Rng rng(1004);
        auto x = Tensor<double>::zeros({1, 3, 8, 8});
        for (auto& v : x.data()) v = rng.uniform(-1, 1);
        auto m_px = Tensor<double>::zeros({1, 1, 8, 8});
        for (int64_t i = 0; i < 64; ++i) m_px.data()[i] = (i % 3 == 0) ? 0.0 : 1.0;
        auto m_lat = Tensor<double>::zeros({1, 1, 2, 2});
        m_lat.data()[1] = 1.0;
        VaeTrainConfig<double> cfg;
        cfg.blend_objective = true;
        auto rep = grad_check<double>(
            vae.params,
            [&](Tape<double>& tape) {
                return vae_loss<double>(&tape, vae, x, &m_px, &m_lat, cfg, nullptr).total;
            },
            1e-5);
        worst = std::max(worst, (double)rep.max_rel_err);
    }
    {
        auto ns = NoiseSchedule::linear(1000);
        auto unet = UNetModel<double>::build(8, 16, 16, 8, 4002);
        Rng rng(1005);
        auto z0 = Tensor<double>::randn({1, 4, 4, 4}, rng);
        auto z0m = Tensor<double>::randn({1, 4, 4, 4}, rng);
        auto eps1 = Tensor<double>::randn({1, 4, 4, 4}, rng);
        auto eps2 = Tensor<double>::randn({1, 4, 4, 4}, rng);
        auto mask = Tensor<double>::zeros({1, 1, 4, 4});
        for (auto& v : mask.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
        std::vector<int> rows = {1};
        int t = 700;
        auto predict = unet_predictor<double>(unet, nullptr, nullptr);
        Tensor<double> z_prev, v2;
        {
            Tape<double> probe;
            auto l = two_step_loss<double>(predict, ns, &probe, z0, z0m, mask, rows, t,
                                           eps1, eps2);
            z_prev = l.z_prev.detach();
            v2 = l.v2.detach();
            probe.clear();
        }
        auto rep = grad_check<double>(
            unet.params,
            [&](Tape<double>& tape) {
                auto first = standard_v_loss<double>(predict, ns, &tape, z0, rows, t, eps1);
                auto l2 = mse(&tape, predict(&tape, z_prev, t - 1, rows), v2);
                return add(&tape, first.l1, scale(&tape, l2, 0.5));
            },
            1e-5);
        worst = std::max(worst, (double)rep.max_rel_err);
    }
    return {"miniature vae and denoiser loss gradients (64-bit)", worst < 1e-4,
            "max rel err " + fmt(worst)};
}

VerifyCheck check_blend_preservation() {
    auto vae = VaeModel<float>::build(8, 16, 4, 4003);
    auto unet = UNetModel<float>::build(8, 16, 16, 8, 4004, false, 100);
    auto ns = NoiseSchedule::linear(100);
    Image img = Image::filled(64, 64, 30, 60, 90);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) img.at(y, x, 0) = (uint8_t)(2 * x + 40);
    InpaintRequest req;
    req.image = img;
    req.mask = border_mask(64, 64, 0.5);
    req.seed = 77;
    req.sampler.num_steps = 5;
    req.sampler.stride = 20;
    req.paste_pixels = true;
    auto result = bld_generate(vae, unet, ns, req);
    double worst = 0;
    for (double r : result.per_step_residual) worst = std::max(worst, r);
    bool paste_ok = result.preserved_max_dev == 0.0;
    return {"per-step latent preservation and pixel paste", worst == 0.0 && paste_ok,
            "max residual " + fmt(worst) + ", preserved dev " +
                fmt(result.preserved_max_dev)};
}

VerifyCheck check_cd_oracle() {
    Rng rng(1006);
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Image img = Image::filled(16, 16, 0, 0, 0);
        for (auto& b : img.rgb) b = (uint8_t)rng.uniform_int(0, 255);
        PixelMask m = PixelMask::filled(16, 16, 1);
        for (auto& b : m.bits) b = rng.uniform() < 0.5 ? 1 : 0;
        bool has0 = false, has1 = false;
        for (uint8_t b : m.bits) (b ? has1 : has0) = true;
        if (!has0 || !has1) continue;
        double total = 0;
        int count = 0;
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                for (auto [dy, dx] : {std::pair{0, 1}, std::pair{1, 0}}) {
                    int yy = y + dy, xx = x + dx;
                    if (yy >= 16 || xx >= 16 || m.at(y, x) == m.at(yy, xx)) continue;
                    double acc = 0;
                    for (int c = 0; c < 3; ++c) {
                        double d = (double)img.at(y, x, c) - img.at(yy, xx, c);
                        acc += d * d;
                    }
                    total += std::sqrt(acc);
                    ++count;
                }
        worst = std::max(worst, std::abs(color_distance(img, m) - total / count));
    }
    Image split = Image::filled(8, 8, 0, 0, 0);
    PixelMask mask = PixelMask::filled(8, 8, 1);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 4; ++x) {
            mask.at(y, x + 4) = 0;
            for (int c = 0; c < 3; ++c) split.at(y, x, c) = 255;
        }
    double bw = color_distance(split, mask);
    bool pass = worst < 1e-9 && std::abs(bw - 255.0 * std::sqrt(3.0)) < 1e-9;
    return {"color distance equals brute force", pass,
            "max dev " + fmt(worst) + ", b/w split " + std::to_string(bw)};
}

}  // namespace

std::vector<VerifyCheck> run_verify_suites() {
    return {check_schedule_identities(), check_alg_identities(), check_op_gradients(),
            check_model_gradients(), check_blend_preservation(), check_cd_oracle()};
}

}  // namespace bldlab
