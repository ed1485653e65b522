#pragma once

#include "bldlab/image.hpp"
#include "bldlab/metrics.hpp"
#include "bldlab/unet.hpp"
#include "bldlab/vae.hpp"

namespace bldlab {

struct InpaintRequest {
    Image image;
    PixelMask mask;            // 1 = preserve, 0 = generate
    int cond_class = 0;        // -1 = unconditional
    uint64_t seed = 0;
    SamplerConfig sampler;
    bool paste_pixels = false;
};

struct InpaintResult {
    Image output;     // final image (pasted when paste_pixels is on)
    Image decoded;    // raw blended decode before any pixel paste
    double cd = 0;                      // NaN when the mask has no boundary
    double cd_pasted = 0;               // NaN unless paste_pixels
    double preserved_max_dev = 0;       // byte-scale, final output vs input
    std::vector<double> per_step_residual;  // preserved-cell blend residual per step
};

// Blended-latent-diffusion inference: deterministic strided sampling with
// guidance, per-step latent blending against the freshly noised masked
// latent, and a final blend with the un-noised masked latent before decode.
InpaintResult bld_generate(const VaeModel<float>& vae, const UNetModel<float>& unet,
                           const NoiseSchedule& ns, const InpaintRequest& req);

// Constructs the border mask for keep_ratio and delegates to bld_generate.
InpaintResult outpaint(const VaeModel<float>& vae, const UNetModel<float>& unet,
                       const NoiseSchedule& ns, const Image& image, double keep_ratio,
                       InpaintRequest req);

// out = generated * (1 - m) + original * m, per pixel (byte-exact copy).
Image paste_pixels(const Image& generated, const Image& original, const PixelMask& m);

}  // namespace bldlab
