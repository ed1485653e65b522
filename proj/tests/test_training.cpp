// Training-run oracles: loss trends and the A/B fine-tuning effect on a
// small fixed-seed protocol. Slower than the unit suites, still minutes.

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "bldlab/blas.hpp"
#include "bldlab/data.hpp"
#include "bldlab/metrics.hpp"
#include "bldlab/trainer.hpp"
#include "bldlab/vae.hpp"

using namespace bldlab;

namespace {

Tensor<float> rows_of(const std::vector<const Tensor<float>*>& items) {
    Shape s = items[0]->shape();
    s[0] = (int)items.size();
    Tensor<float> out = Tensor<float>::zeros(s);
    int64_t n = items[0]->numel();
    for (size_t i = 0; i < items.size(); ++i)
        std::memcpy(out.data().data() + (int64_t)i * n, items[i]->data().data(),
                    sizeof(float) * n);
    return out;
}

struct ToySet {
    std::vector<Tensor<float>> images, masks_px, masks_lat;
    std::vector<int> classes;
    std::vector<Scene> raw;
};

ToySet toy_set(int count, uint64_t seed, int first_index = 0) {
    ToySet set;
    for (auto& scene : generate_scenes(count, seed, first_index)) {
        set.images.push_back(stack_batch<float>({image_to_tensor(scene.image)}));
        set.masks_px.push_back(mask_to_tensor(scene.train_mask));
        set.masks_lat.push_back(latent_mask_to_tensor(resize_to_latent(scene.train_mask, 4)));
        set.classes.push_back(scene.cls);
        set.raw.push_back(std::move(scene));
    }
    return set;
}

}  // namespace

TEST_CASE("vae loss halves within 200 steps on a 64-image toy set") {
    auto set = toy_set(64, 71);
    auto model = VaeModel<float>::build(32, 64, 4, 71);
    auto opt = AdamState<float>::init(model.params, 1e-3f);
    VaeTrainConfig<float> cfg;
    Rng rng(derive_seed(71, "vae-train"));
    double initial = -1, last = -1;
    for (int step = 0; step < 200; ++step) {
        std::vector<const Tensor<float>*> xs;
        for (int b = 0; b < 8; ++b)
            xs.push_back(&set.images[rng.uniform_int(0, (int64_t)set.images.size() - 1)]);
        Tensor<float> x = rows_of(xs);
        auto rep = vae_train_step(model, model.params, opt, x, nullptr, nullptr, cfg, &rng);
        if (step == 0) initial = rep.total;
        last = rep.total;
    }
    CHECK(last < 0.5 * initial);
}

TEST_CASE("combined two-step loss trends downward over 500 steps") {
    auto set = toy_set(64, 72);
    auto vae = VaeModel<float>::build(32, 64, 4, 72);
    // latents of an untrained-but-fixed vae are a fine training target here
    std::vector<Tensor<float>> z0s, z0ms;
    for (size_t i = 0; i < set.images.size(); ++i) {
        Tensor<float> zeros = Tensor<float>::zeros(set.images[i].shape());
        auto xm = masked_blend<float>(nullptr, zeros, set.images[i], set.masks_px[i]);
        z0s.push_back(vae.encode(nullptr, set.images[i], false, nullptr));
        z0ms.push_back(vae.encode(nullptr, xm, false, nullptr));
    }
    auto ns = NoiseSchedule::linear(1000);
    auto model = UNetModel<float>::build(16, 24, 24, 8, 72);
    auto opt = AdamState<float>::init(model.params, 3e-4f);
    TrainConfig cfg;
    cfg.mode = TrainMode::two_step;
    cfg.lambda = 0.5;
    Rng rng(derive_seed(72, "denoiser-train"));
    std::vector<double> losses;
    auto predict = unet_predictor<float>(model, nullptr, nullptr);
    for (int step = 0; step < 500; ++step) {
        DenoiserBatch<float> b;
        std::vector<const Tensor<float>*> z0p, z0mp, mlp;
        b.classes.resize(4);
        for (int i = 0; i < 4; ++i) {
            int idx = (int)rng.uniform_int(0, (int64_t)z0s.size() - 1);
            z0p.push_back(&z0s[idx]);
            z0mp.push_back(&z0ms[idx]);
            mlp.push_back(&set.masks_lat[idx]);
            b.classes[i] = set.classes[idx];
        }
        b.z0 = rows_of(z0p);
        b.z0_masked = rows_of(z0mp);
        b.mask_latent = rows_of(mlp);
        auto rep =
            train_step<float>(predict, model.params, opt, ns, b, cfg, step, model.classes, rng);
        losses.push_back(rep.combined);
    }
    auto avg = [&](int begin, int end) {
        double t = 0;
        for (int i = begin; i < end; ++i) t += losses[i];
        return t / (end - begin);
    };
    double initial = avg(0, 50);
    double final_avg = avg(450, 500);
    CHECK(final_avg < 0.7 * initial);

    // non-degenerate conditioning: a trained model reacts to the class id
    Rng probe_rng(99);
    auto z = Tensor<float>::randn({1, 4, 16, 16}, probe_rng);
    auto with_class = predict_v(model, nullptr, z, 500, Condition{0});
    auto with_null = predict_v(model, nullptr, z, 500, Condition::null_cond());
    double diff = 0;
    for (int64_t i = 0; i < z.numel(); ++i)
        diff = std::max(diff, std::abs((double)with_class.data()[i] - with_null.data()[i]));
    CHECK(diff > 1e-4);
}

TEST_CASE("blend-objective fine-tuning lowers blended-reconstruct CD on held-out scenes") {
    auto train = toy_set(128, 73);
    auto held = toy_set(32, 73, 128);

    auto plain = VaeModel<float>::build(32, 64, 4, 73);
    auto opt = AdamState<float>::init(plain.params, 1e-3f);
    VaeTrainConfig<float> cfg;
    Rng rng(derive_seed(73, "vae-train"));
    for (int step = 0; step < 600; ++step) {
        std::vector<const Tensor<float>*> xs;
        for (int b = 0; b < 4; ++b)
            xs.push_back(&train.images[rng.uniform_int(0, (int64_t)train.images.size() - 1)]);
        Tensor<float> x = rows_of(xs);
        vae_train_step(plain, plain.params, opt, x, nullptr, nullptr, cfg, &rng);
    }

    auto tuned = VaeModel<float>::build(32, 64, 4, 73);
    tuned.params.load_values_from(plain.params);
    auto opt2 = AdamState<float>::init(tuned.params, 2e-4f);
    VaeTrainConfig<float> blend_cfg;
    blend_cfg.blend_objective = true;
    Rng rng2(derive_seed(73, "vae-finetune"));
    for (int step = 0; step < 600; ++step) {
        std::vector<const Tensor<float>*> xs, mps, mls;
        for (int b = 0; b < 4; ++b) {
            int idx = (int)rng2.uniform_int(0, (int64_t)train.images.size() - 1);
            xs.push_back(&train.images[idx]);
            mps.push_back(&train.masks_px[idx]);
            mls.push_back(&train.masks_lat[idx]);
        }
        Tensor<float> x = rows_of(xs), m_px = rows_of(mps), m_lat = rows_of(mls);
        vae_train_step(tuned, tuned.params, opt2, x, &m_px, &m_lat, blend_cfg, nullptr);
    }

    auto blended_cd = [&](const VaeModel<float>& model) {
        double total = 0;
        for (size_t i = 0; i < held.images.size(); ++i) {
            auto recon = model.blended_reconstruct(nullptr, held.images[i],
                                                   held.masks_px[i], held.masks_lat[i]);
            total += color_distance(tensor_to_image(recon), held.raw[i].train_mask);
        }
        return total / (double)held.images.size();
    };
    double before = blended_cd(plain);
    double after = blended_cd(tuned);
    MESSAGE("blended-reconstruct CD before ", before, " after ", after);
    CHECK(after < before);
}

int main(int argc, char** argv) {
    blas_init();
    blas_set_threads(1);
    doctest::Context ctx;
    ctx.applyCommandLine(argc, argv);
    return ctx.run();
}
