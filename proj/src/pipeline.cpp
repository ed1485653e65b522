#include "bldlab/pipeline.hpp"

#include <cmath>
#include <limits>

namespace bldlab {

namespace {

double quiet_nan() { return std::numeric_limits<double>::quiet_NaN(); }

bool mask_uniform(const PixelMask& m) {
    bool has0 = false, has1 = false;
    for (uint8_t b : m.bits) (b ? has1 : has0) = true;
    return !(has0 && has1);
}

// max |z - reference| over latent cells with mask = 1, across channels
double preserved_residual(const Tensor<float>& z, const Tensor<float>& ref,
                          const Tensor<float>& mask_latent) {
    int c = z.dim(1);
    int64_t hw = (int64_t)z.dim(2) * z.dim(3);
    double worst = 0;
    for (int ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < hw; ++i)
            if (mask_latent.data()[i] == 1.0f) {
                double d = std::abs((double)z.data()[ch * hw + i] -
                                    (double)ref.data()[ch * hw + i]);
                worst = std::max(worst, d);
            }
    return worst;
}

}  // namespace

Image paste_pixels(const Image& generated, const Image& original, const PixelMask& m) {
    if (generated.height != original.height || generated.width != original.width ||
        generated.height != m.height || generated.width != m.width)
        throw std::invalid_argument(
            "paste_pixels: generated " + std::to_string(generated.width) + "x" +
            std::to_string(generated.height) + " vs original " +
            std::to_string(original.width) + "x" + std::to_string(original.height) +
            " vs mask " + std::to_string(m.width) + "x" + std::to_string(m.height));
    Image out = generated;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(y, x) == 1)
                for (int c = 0; c < 3; ++c) out.at(y, x, c) = original.at(y, x, c);
    return out;
}

InpaintResult bld_generate(const VaeModel<float>& vae, const UNetModel<float>& unet,
                           const NoiseSchedule& ns, const InpaintRequest& req) {
    const Image& image = req.image;
    const PixelMask& mask = req.mask;
    if (image.height != mask.height || image.width != mask.width)
        throw std::invalid_argument("inpaint: image " + std::to_string(image.width) + "x" +
                                    std::to_string(image.height) + " and mask " +
                                    std::to_string(mask.width) + "x" +
                                    std::to_string(mask.height) + " sizes disagree");
    if (image.height % VaeModel<float>::factor || image.width % VaeModel<float>::factor)
        throw std::invalid_argument("inpaint: image size " + std::to_string(image.width) +
                                    "x" + std::to_string(image.height) +
                                    " not divisible by the latent factor 4");
    if (unet.max_timestep != ns.steps())
        throw std::invalid_argument("inpaint: denoiser trained for T = " +
                                    std::to_string(unet.max_timestep) +
                                    " but the schedule has T = " +
                                    std::to_string(ns.steps()));
    if (unet.out_channels != vae.latent_channels)
        throw std::invalid_argument("inpaint: denoiser latent channels " +
                                    std::to_string(unet.out_channels) +
                                    " vs vae latent channels " +
                                    std::to_string(vae.latent_channels));
    auto visited = req.sampler.visited_timesteps(ns);

    // masked image and its latent
    Tensor<float> x = stack_batch<float>({image_to_tensor(image)});
    Tensor<float> m_px = mask_to_tensor(mask);
    Tensor<float> zeros = Tensor<float>::zeros(x.shape());
    Tensor<float> x_masked = masked_blend<float>(nullptr, zeros, x, m_px);
    Tensor<float> z0_masked = vae.encode(nullptr, x_masked, false, nullptr);
    LatentMask lat = resize_to_latent(mask, VaeModel<float>::factor);
    Tensor<float> m_lat = latent_mask_to_tensor(lat);

    Condition cond{req.cond_class};
    InpaintResult result;

    Rng init_rng(derive_seed(req.seed, "bld-init"));
    Tensor<float> z = Tensor<float>::randn(z0_masked.shape(), init_rng);

    for (size_t i = 0; i < visited.size(); ++i) {
        int t = visited[i];
        int t_prev = i + 1 < visited.size() ? visited[i + 1] : 0;
        Tensor<float> v_hat;
        if (unet.in_channels == 9) {
            auto zin = concat_channels<float>(nullptr, z, m_lat);
            zin = concat_channels<float>(nullptr, zin, z0_masked);
            v_hat = predict_v_guided(unet, zin, t, cond, req.sampler.guidance_scale);
        } else {
            v_hat = predict_v_guided(unet, z, t, cond, req.sampler.guidance_scale);
        }
        z = ddim_step(ns, z, v_hat, t, t_prev);

        Tensor<float> z_masked_t;
        if (t_prev > 0) {
            Rng step_rng(derive_seed(req.seed, "bld-step", (uint64_t)t_prev));
            Tensor<float> eps = Tensor<float>::randn(z0_masked.shape(), step_rng);
            z_masked_t = forward_diffuse(ns, z0_masked, eps, t_prev);
        } else {
            z_masked_t = z0_masked;  // final blend uses the clean masked latent
        }
        z = masked_blend<float>(nullptr, z, z_masked_t, m_lat);
        result.per_step_residual.push_back(preserved_residual(z, z_masked_t, m_lat));
    }

    Tensor<float> decoded = vae.decode(nullptr, z);
    result.decoded = tensor_to_image(decoded);
    bool uniform = mask_uniform(mask);
    result.cd = uniform ? quiet_nan() : color_distance(result.decoded, mask);
    if (req.paste_pixels) {
        result.output = paste_pixels(result.decoded, image, mask);
        result.cd_pasted = uniform ? quiet_nan() : color_distance(result.output, mask);
    } else {
        result.output = result.decoded;
        result.cd_pasted = quiet_nan();
    }
    double dev = 0;
    for (int y = 0; y < mask.height; ++y)
        for (int x2 = 0; x2 < mask.width; ++x2)
            if (mask.at(y, x2) == 1)
                for (int c = 0; c < 3; ++c)
                    dev = std::max(dev, std::abs((double)result.output.at(y, x2, c) -
                                                 (double)image.at(y, x2, c)));
    result.preserved_max_dev = dev;
    return result;
}

InpaintResult outpaint(const VaeModel<float>& vae, const UNetModel<float>& unet,
                       const NoiseSchedule& ns, const Image& image, double keep_ratio,
                       InpaintRequest req) {
    req.image = image;
    req.mask = border_mask(image.height, image.width, keep_ratio);
    return bld_generate(vae, unet, ns, req);
}

}  // namespace bldlab
