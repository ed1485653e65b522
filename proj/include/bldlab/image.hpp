#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bldlab/mask.hpp"
#include "bldlab/tensor.hpp"

namespace bldlab {

// 8-bit RGB image, row-major, interleaved channels.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> rgb;  // size = 3*height*width

    static Image filled(int h, int w, uint8_t r, uint8_t g, uint8_t b) {
        Image im{h, w, std::vector<uint8_t>((size_t)3 * h * w)};
        for (int64_t i = 0; i < (int64_t)h * w; ++i) {
            im.rgb[3 * i] = r;
            im.rgb[3 * i + 1] = g;
            im.rgb[3 * i + 2] = b;
        }
        return im;
    }

    uint8_t at(int y, int x, int c) const { return rgb[((size_t)y * width + x) * 3 + c]; }
    uint8_t& at(int y, int x, int c) { return rgb[((size_t)y * width + x) * 3 + c]; }
};

// binary PPM (P6), maxval 255
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

// binary PGM (P5): 0 = generate, 255 = preserve; loader binarizes at 128
void write_pgm(const std::string& path, const PixelMask& mask);
PixelMask read_pgm(const std::string& path);

// byte <-> [-1,1] mapping: v = byte/127.5 - 1
Tensor<float> image_to_tensor(const Image& img);          // [3,H,W]
Image tensor_to_image(const Tensor<float>& t);            // accepts [3,H,W] or [1,3,H,W]
Tensor<float> mask_to_tensor(const PixelMask& m);         // [1,1,H,W], values {0,1}
Tensor<float> latent_mask_to_tensor(const LatentMask& m); // [1,1,h,w]

}  // namespace bldlab
