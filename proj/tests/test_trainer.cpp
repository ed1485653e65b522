#include <doctest.h>

#include "bldlab/trainer.hpp"

using namespace bldlab;

namespace {

// exact v for the implied noise of z at level t relative to the true z0
template <class T>
VPredictor<T> oracle_predictor(const NoiseSchedule& ns, const Tensor<T>& z0) {
    return [&ns, z0](Tape<T>*, const Tensor<T>& z, int t, const std::vector<int>&) {
        double sa = ns.sqrt_alpha_bar(t);
        double sb = ns.sqrt_one_minus_alpha_bar(t);
        Tensor<T> v = Tensor<T>::zeros(z.shape());
        for (int64_t i = 0; i < z.numel(); ++i) {
            double eps = ((double)z.data()[i] - sa * (double)z0.data()[i]) / sb;
            v.data()[i] = (T)(sa * eps - sb * (double)z0.data()[i]);
        }
        return v;
    };
}

template <class T>
VPredictor<T> zero_predictor() {
    return [](Tape<T>*, const Tensor<T>& z, int, const std::vector<int>&) {
        return Tensor<T>::zeros(z.shape());
    };
}

}  // namespace

TEST_CASE("standard loss vanishes for the oracle model and closes for the zero model") {
    auto ns = NoiseSchedule::linear(1000);
    Rng rng(1);
    auto z0 = Tensor<float>::randn({2, 4, 4, 4}, rng);
    auto eps1 = Tensor<float>::randn({2, 4, 4, 4}, rng);
    std::vector<int> rows = {0, 1};

    Tape<float> tape;
    auto oracle = standard_v_loss<float>(oracle_predictor<float>(ns, z0), ns, &tape, z0,
                                         rows, 417, eps1);
    CHECK(oracle.l1.item() < 1e-10f);

    auto zero = standard_v_loss<float>(zero_predictor<float>(), ns, &tape, z0, rows, 417,
                                       eps1);
    auto v1 = v_target(ns, z0, eps1, 417);
    double mean_sq = 0;
    for (float v : v1.data()) mean_sq += (double)v * v;
    mean_sq /= (double)v1.numel();
    CHECK(zero.l1.item() == doctest::Approx(mean_sq).epsilon(1e-5));
}

TEST_CASE("standard loss is finite and positive for a fresh random model") {
    auto ns = NoiseSchedule::linear(1000);
    auto model = UNetModel<float>::build(8, 16, 16, 8, 21);
    Rng rng(2);
    auto z0 = Tensor<float>::randn({2, 4, 8, 8}, rng);
    auto eps1 = Tensor<float>::randn({2, 4, 8, 8}, rng);
    Tape<float> tape;
    auto loss = standard_v_loss<float>(unet_predictor<float>(model, nullptr, nullptr), ns,
                                       &tape, z0, {0, 3}, 250, eps1);
    CHECK(std::isfinite(loss.l1.item()));
    CHECK(loss.l1.item() > 0.0f);
    tape.clear();
}

TEST_CASE("two-step loss realizes the blending recipe exactly") {
    debug_checks() = true;
    auto ns = NoiseSchedule::linear(1000);
    Rng rng(3);
    auto z0 = Tensor<float>::randn({2, 4, 4, 4}, rng);
    auto z0_masked = Tensor<float>::randn({2, 4, 4, 4}, rng);
    auto eps1 = Tensor<float>::randn({2, 4, 4, 4}, rng);
    auto eps2 = Tensor<float>::randn({2, 4, 4, 4}, rng);
    auto mask = Tensor<float>::zeros({2, 1, 4, 4});
    for (int64_t i = 0; i < mask.numel(); ++i) mask.data()[i] = (i % 2 == 0) ? 1.0f : 0.0f;
    std::vector<int> rows = {1, 2};
    int t = 533;

    Tape<float> tape;
    auto result = two_step_loss<float>(oracle_predictor<float>(ns, z0), ns, &tape, z0,
                                       z0_masked, mask, rows, t, eps1, eps2);

    // the true-noise construction inverts the re-noising step
    double sa = ns.sqrt_alpha_bar(t - 1), sb = ns.sqrt_one_minus_alpha_bar(t - 1);
    for (int64_t i = 0; i < z0.numel(); ++i) {
        double rebuilt = sa * z0.data()[i] + sb * result.eps2_star.data()[i];
        CHECK(std::abs(rebuilt - result.z_prev.data()[i]) < 1e-6);
    }
    // v2 from the same quantities
    for (int64_t i = 0; i < z0.numel(); ++i) {
        double expect = sa * result.eps2_star.data()[i] - sb * z0.data()[i];
        CHECK(result.v2.data()[i] == doctest::Approx(expect).epsilon(1e-6));
    }
    debug_checks() = false;

    CHECK_THROWS_AS(two_step_loss<float>(oracle_predictor<float>(ns, z0), ns, &tape, z0,
                                         z0_masked, mask, rows, 1, eps1, eps2),
                    std::invalid_argument);
    tape.clear();
}

TEST_CASE("two-step loss with no preserved cells and an exact model is transparent") {
    auto ns = NoiseSchedule::linear(1000);
    Rng rng(4);
    auto z0 = Tensor<float>::randn({1, 4, 4, 4}, rng);
    auto z0_masked = Tensor<float>::randn({1, 4, 4, 4}, rng);
    auto eps1 = Tensor<float>::randn({1, 4, 4, 4}, rng);
    auto eps2 = Tensor<float>::randn({1, 4, 4, 4}, rng);
    auto mask = Tensor<float>::zeros({1, 1, 4, 4});  // nothing preserved: blend no-op
    int t = 700;

    Tape<float> tape;
    auto result = two_step_loss<float>(oracle_predictor<float>(ns, z0), ns, &tape, z0,
                                       z0_masked, mask, {0}, t, eps1, eps2);
    // exact recovery: blended z0_hat is z0 itself
    for (int64_t i = 0; i < z0.numel(); ++i)
        CHECK(result.z0_hat_blended.data()[i] == doctest::Approx(z0.data()[i]).epsilon(1e-4));
    // and the true noise collapses to eps2
    for (int64_t i = 0; i < z0.numel(); ++i)
        CHECK(result.eps2_star.data()[i] == doctest::Approx(eps2.data()[i]).epsilon(2e-3));
    // v2 equals the plain v-target at t-1 under eps2
    auto v2_expect = v_target(ns, z0, eps2, t - 1);
    for (int64_t i = 0; i < z0.numel(); ++i)
        CHECK(result.v2.data()[i] == doctest::Approx(v2_expect.data()[i]).epsilon(2e-3));
    CHECK(result.l1.item() < 1e-10f);
    CHECK(result.l2.item() < 1e-8f);
    tape.clear();
}

TEST_CASE("blend-order equivalence: noising the blended z0 equals blending the noised pair") {
    auto ns = NoiseSchedule::linear(1000);
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        int t = (int)rng.uniform_int(2, 1000);
        auto z0_hat = Tensor<float>::randn({1, 4, 4, 4}, rng);
        auto z0_masked = Tensor<float>::randn({1, 4, 4, 4}, rng);
        auto eps2 = Tensor<float>::randn({1, 4, 4, 4}, rng);
        auto mask = Tensor<float>::zeros({1, 1, 4, 4});
        for (auto& v : mask.data()) v = rng.uniform() < 0.5 ? 1.0f : 0.0f;

        auto blended_first = forward_diffuse(
            ns, masked_blend<float>(nullptr, z0_hat, z0_masked, mask), eps2, t - 1);
        auto noised_first = masked_blend<float>(
            nullptr, forward_diffuse(ns, z0_hat, eps2, t - 1),
            forward_diffuse(ns, z0_masked, eps2, t - 1), mask);
        for (int64_t i = 0; i < z0_hat.numel(); ++i)
            CHECK(std::abs(blended_first.data()[i] - noised_first.data()[i]) < 1e-6);
    }
}

TEST_CASE("two-step with lambda 0 produces the standard-mode parameter update") {
    auto ns = NoiseSchedule::linear(1000);
    auto model_a = UNetModel<float>::build(8, 16, 16, 8, 77);
    auto model_b = UNetModel<float>::build(8, 16, 16, 8, 77);
    Rng rng(6);
    auto z0 = Tensor<float>::randn({2, 4, 8, 8}, rng);
    auto z0_masked = Tensor<float>::randn({2, 4, 8, 8}, rng);
    auto eps1 = Tensor<float>::randn({2, 4, 8, 8}, rng);
    auto eps2 = Tensor<float>::randn({2, 4, 8, 8}, rng);
    auto mask = Tensor<float>::zeros({2, 1, 8, 8});
    for (auto& v : mask.data()) v = rng.uniform() < 0.5 ? 1.0f : 0.0f;
    std::vector<int> rows = {0, 5};
    int t = 432;

    auto opt_a = AdamState<float>::init(model_a.params, 1e-3f);
    {
        Tape<float> tape;
        auto loss = standard_v_loss<float>(unet_predictor<float>(model_a, nullptr, nullptr),
                                           ns, &tape, z0, rows, t, eps1);
        model_a.params.zero_grad();
        tape.backward(loss.l1);
        adam_step(model_a.params, opt_a);
        tape.clear();
    }
    auto opt_b = AdamState<float>::init(model_b.params, 1e-3f);
    {
        Tape<float> tape;
        auto losses = two_step_loss<float>(unet_predictor<float>(model_b, nullptr, nullptr),
                                           ns, &tape, z0, z0_masked, mask, rows, t, eps1,
                                           eps2);
        auto combined = add(&tape, losses.l1, scale(&tape, losses.l2, 0.0f));
        model_b.params.zero_grad();
        tape.backward(combined);
        adam_step(model_b.params, opt_b);
        tape.clear();
    }
    auto ita = model_a.params.begin();
    for (auto& [name, t_b] : model_b.params) {
        CHECK(ita->second.data() == t_b.data());
        ++ita;
    }
}

TEST_CASE("train_step report sequences are bit-identical across reruns") {
    auto run = [](uint64_t seed) {
        auto ns = NoiseSchedule::linear(1000);
        auto model = UNetModel<float>::build(8, 16, 16, 8, 55);
        auto opt = AdamState<float>::init(model.params, 1e-3f);
        Rng rng(seed);
        Rng data_rng(9);
        DenoiserBatch<float> batch;
        batch.z0 = Tensor<float>::randn({2, 4, 8, 8}, data_rng);
        batch.z0_masked = Tensor<float>::randn({2, 4, 8, 8}, data_rng);
        batch.mask_latent = Tensor<float>::zeros({2, 1, 8, 8});
        for (auto& v : batch.mask_latent.data()) v = data_rng.uniform() < 0.5 ? 1.0f : 0.0f;
        batch.classes = {1, 4};
        TrainConfig cfg;
        cfg.mode = TrainMode::two_step;
        cfg.lambda = 0.5;
        std::vector<LossReport> reports;
        auto predict = unet_predictor<float>(model, nullptr, nullptr);
        for (int s = 0; s < 4; ++s)
            reports.push_back(
                train_step<float>(predict, model.params, opt, ns, batch, cfg, s,
                                  model.classes, rng));
        return reports;
    };
    auto a = run(31), b = run(31);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].t == b[i].t);
        CHECK(a[i].l1 == b[i].l1);
        CHECK(a[i].l2 == b[i].l2);
        CHECK(a[i].combined == b[i].combined);
        CHECK(std::abs(a[i].combined - (a[i].l1 + 0.5 * a[i].l2)) < 1e-6);
    }
}

TEST_CASE("timestep sampling respects mode bounds and stays uniform") {
    Rng rng(8);
    for (int i = 0; i < 100000; ++i)
        CHECK(sample_timestep(TrainMode::two_step, rng, 1000) >= 2);

    // chi-squared uniformity over 20 bins, df = 19, p > 0.01 means the
    // statistic stays below 36.191
    Rng rng2(9);
    std::vector<int> bins(20, 0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        int t = sample_timestep(TrainMode::standard, rng2, 1000);
        CHECK(t >= 1);
        CHECK(t <= 1000);
        bins[(t - 1) / 50]++;
    }
    double expected = draws / 20.0;
    double chi2 = 0;
    for (int b : bins) chi2 += (b - expected) * (b - expected) / expected;
    CHECK(chi2 < 36.191);

    Rng r1(77), r2(77);
    for (int i = 0; i < 100; ++i)
        CHECK(sample_timestep(TrainMode::two_step, r1, 1000) ==
              sample_timestep(TrainMode::two_step, r2, 1000));
}

TEST_CASE("combined two-step gradient matches finite differences on a miniature model") {
    // The optimization objective treats the re-noised latent and the second
    // target as constants (stop-gradient), so the finite-difference oracle
    // freezes them at their unperturbed values.
    auto ns = NoiseSchedule::linear(1000);
    auto model = UNetModel<double>::build(8, 16, 16, 8, 91);
    Rng rng(10);
    auto z0 = Tensor<double>::randn({1, 4, 4, 4}, rng);
    auto z0_masked = Tensor<double>::randn({1, 4, 4, 4}, rng);
    auto eps1 = Tensor<double>::randn({1, 4, 4, 4}, rng);
    auto eps2 = Tensor<double>::randn({1, 4, 4, 4}, rng);
    auto mask = Tensor<double>::zeros({1, 1, 4, 4});
    for (auto& v : mask.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    std::vector<int> rows = {3};
    int t = 618;
    double lambda = 0.5;

    auto predict = unet_predictor<double>(model, nullptr, nullptr);
    Tensor<double> z_prev_frozen, v2_frozen;
    {
        Tape<double> probe;
        auto losses = two_step_loss<double>(predict, ns, &probe, z0, z0_masked, mask, rows,
                                            t, eps1, eps2);
        z_prev_frozen = losses.z_prev.detach();
        v2_frozen = losses.v2.detach();
        probe.clear();
    }
    auto loss_fn = [&](Tape<double>& tape) {
        auto first = standard_v_loss<double>(predict, ns, &tape, z0, rows, t, eps1);
        auto v_hat2 = predict(&tape, z_prev_frozen, t - 1, rows);
        auto l2 = mse(&tape, v_hat2, v2_frozen);
        return add(&tape, first.l1, scale(&tape, l2, lambda));
    };
    auto report = grad_check<double>(model.params, loss_fn, 2e-6);
    CHECK(report.max_rel_err < 1e-4);

    // the tape gradient of the production loss agrees with the frozen form
    model.params.zero_grad();
    Tape<double> tape;
    auto losses = two_step_loss<double>(predict, ns, &tape, z0, z0_masked, mask, rows, t,
                                        eps1, eps2);
    auto combined = add(&tape, losses.l1, scale(&tape, losses.l2, lambda));
    tape.backward(combined);
    std::vector<double> grads_prod;
    for (auto& [name, p] : model.params)
        grads_prod.insert(grads_prod.end(), p.grad().begin(), p.grad().end());
    tape.clear();

    model.params.zero_grad();
    Tape<double> tape2;
    auto frozen = loss_fn(tape2);
    tape2.backward(frozen);
    std::vector<double> grads_frozen;
    for (auto& [name, p] : model.params)
        grads_frozen.insert(grads_frozen.end(), p.grad().begin(), p.grad().end());
    tape2.clear();
    model.params.zero_grad();

    REQUIRE(grads_prod.size() == grads_frozen.size());
    for (size_t i = 0; i < grads_prod.size(); ++i)
        CHECK(grads_prod[i] == doctest::Approx(grads_frozen[i]).epsilon(1e-9));
}
