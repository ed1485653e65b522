#include <doctest.h>

#include "bldlab/ops.hpp"
#include "bldlab/optim.hpp"

using namespace bldlab;

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
    Rng rng(5);
    ParameterSet<float> params;
    params.add("w", Tensor<float>::randn({4, 4}, rng));
    auto before = params.find("w")->data();
    params.zero_grad();
    auto state = AdamState<float>::init(params, 1e-2f);
    adam_step(params, state);
    CHECK(params.find("w")->data() == before);
    CHECK(state.step == 1);
}

TEST_CASE("single adam step matches the hand-computed closed form") {
    // step 1 with constant grad g: m_hat = g, v_hat = g^2,
    // delta = -lr * g / (|g| + eps)
    double p0 = 0.3, g = 0.7, lr = 0.01;
    ParameterSet<double> params;
    params.add("p", Tensor<double>::from({p0}, {1}));
    params.find("p")->grad()[0] = g;
    auto state = AdamState<double>::init(params, lr);
    adam_step(params, state);
    double expected = p0 - lr * g / (std::abs(g) + 1e-8);
    CHECK(params.find("p")->data()[0] == doctest::Approx(expected).epsilon(1e-12));
    // grads are the caller's to zero
    CHECK(params.find("p")->grad()[0] == g);
}

TEST_CASE("identical parameters with identical grads get identical updates") {
    Rng rng(6);
    auto vals = Tensor<double>::randn({8}, rng);
    auto grads = Tensor<double>::randn({8}, rng);
    ParameterSet<double> params;
    params.add("a", Tensor<double>::from(vals.data(), {8}));
    params.add("b", Tensor<double>::from(vals.data(), {8}));
    params.find("a")->grad() = grads.data();
    params.find("b")->grad() = grads.data();
    auto state = AdamState<double>::init(params, 3e-3);
    adam_step(params, state);
    CHECK(params.find("a")->data() == params.find("b")->data());
}

TEST_CASE("adam update is a pure function of params, grads and state") {
    Rng rng(7);
    auto run = [&](uint64_t seed) {
        Rng r(seed);
        ParameterSet<float> params;
        params.add("w", Tensor<float>::randn({16}, r));
        params.add("v", Tensor<float>::randn({4, 4}, r));
        for (auto& [name, t] : params)
            for (auto& g : t.grad()) g = (float)r.normal();
        auto state = AdamState<float>::init(params, 1e-3f);
        for (int i = 0; i < 3; ++i) adam_step(params, state);
        std::vector<float> flat;
        for (auto& [name, t] : params)
            flat.insert(flat.end(), t.data().begin(), t.data().end());
        return flat;
    };
    CHECK(run(99) == run(99));
}

TEST_CASE("adam rejects parameters with missing gradients") {
    ParameterSet<float> params;
    params.add("w", Tensor<float>::zeros({3}));
    params.add("u", Tensor<float>::zeros({3}));
    params.find("w")->zero_grad();  // "u" never received a gradient
    auto state = AdamState<float>::init(params, 1e-3f);
    CHECK_THROWS_AS(adam_step(params, state), std::invalid_argument);
}

TEST_CASE("grad_check on a linear layer passes at 1e-6 in 64-bit") {
    Rng rng(17);
    ParameterSet<double> params;
    params.add("w", kaiming_uniform<double>({3, 5}, 5, rng));
    params.add("b", Tensor<double>::randn({3}, rng));
    auto x = Tensor<double>::randn({4, 5}, rng);
    auto target = Tensor<double>::randn({4, 3}, rng);
    auto report = grad_check<double>(
        params,
        [&](Tape<double>& tape) {
            return mse<double>(&tape,
                               linear<double>(&tape, x, *params.find("w"), *params.find("b")),
                               target);
        },
        1e-5);
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("grad_check on a conv+groupnorm+silu stack passes at 1e-4 in 64-bit") {
    Rng rng(19);
    ParameterSet<double> params;
    params.add("w", kaiming_uniform<double>({8, 3, 3, 3}, 27, rng));
    params.add("b", Tensor<double>::zeros({8}));
    params.add("gamma", Tensor<double>::full({8}, 1.0));
    params.add("beta", Tensor<double>::zeros({8}));
    auto x = Tensor<double>::randn({2, 3, 6, 6}, rng);
    auto target = Tensor<double>::randn({2, 8, 6, 6}, rng);
    auto report = grad_check<double>(
        params,
        [&](Tape<double>& tape) {
            auto h = conv2d<double>(&tape, x, *params.find("w"), *params.find("b"), 1);
            h = group_norm<double>(&tape, h, *params.find("gamma"), *params.find("beta"), 8);
            h = silu<double>(&tape, h);
            return mse<double>(&tape, h, target);
        },
        1e-5);
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("grad_check reports zero error for a constant function") {
    ParameterSet<double> params;
    params.add("p", Tensor<double>::full({4}, 0.5));
    auto report = grad_check<double>(
        params,
        [&](Tape<double>& tape) {
            auto p = *params.find("p");
            return mse<double>(&tape, p, p);
        },
        1e-5);
    CHECK(report.max_rel_err == 0.0);
    CHECK(report.mean_rel_err == 0.0);
}

TEST_CASE("grad_check rejects oversized parameter sets") {
    ParameterSet<double> params;
    params.add("big", Tensor<double>::zeros({300, 300}));  // 9e4 scalars
    CHECK_THROWS_AS(grad_check<double>(
                        params,
                        [&](Tape<double>& tape) {
                            return sum<double>(&tape, *params.find("big"));
                        },
                        1e-5),
                    std::invalid_argument);
}
