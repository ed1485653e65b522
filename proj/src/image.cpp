#include "bldlab/image.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace bldlab {

namespace {

void skip_pnm_whitespace(std::istream& in) {
    int c;
    while ((c = in.peek()) != EOF) {
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
}

int read_pnm_int(std::istream& in, const std::string& path) {
    skip_pnm_whitespace(in);
    int v;
    if (!(in >> v)) throw std::runtime_error("pnm: malformed header in " + path);
    return v;
}

void read_pnm_payload(std::istream& in, std::vector<uint8_t>& out, const std::string& path) {
    in.get();  // single whitespace after maxval
    in.read(reinterpret_cast<char*>(out.data()), (std::streamsize)out.size());
    if ((size_t)in.gcount() != out.size())
        throw std::runtime_error("pnm: truncated pixel data in " + path);
}

}  // namespace

void write_ppm(const std::string& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("ppm: cannot open " + path + " for writing");
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()), (std::streamsize)img.rgb.size());
    if (!out) throw std::runtime_error("ppm: write failed for " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("ppm: cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw std::runtime_error("ppm: " + path + " is not a P6 file");
    int w = read_pnm_int(in, path);
    int h = read_pnm_int(in, path);
    int maxval = read_pnm_int(in, path);
    if (w <= 0 || h <= 0 || maxval != 255)
        throw std::runtime_error("ppm: unsupported header in " + path);
    Image img{h, w, std::vector<uint8_t>((size_t)3 * h * w)};
    read_pnm_payload(in, img.rgb, path);
    return img;
}

void write_pgm(const std::string& path, const PixelMask& mask) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("pgm: cannot open " + path + " for writing");
    out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
    std::vector<uint8_t> bytes(mask.bits.size());
    for (size_t i = 0; i < mask.bits.size(); ++i) bytes[i] = mask.bits[i] ? 255 : 0;
    out.write(reinterpret_cast<const char*>(bytes.data()), (std::streamsize)bytes.size());
    if (!out) throw std::runtime_error("pgm: write failed for " + path);
}

PixelMask read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("pgm: cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw std::runtime_error("pgm: " + path + " is not a P5 file");
    int w = read_pnm_int(in, path);
    int h = read_pnm_int(in, path);
    int maxval = read_pnm_int(in, path);
    if (w <= 0 || h <= 0 || maxval != 255)
        throw std::runtime_error("pgm: unsupported header in " + path);
    std::vector<uint8_t> bytes((size_t)h * w);
    read_pnm_payload(in, bytes, path);
    PixelMask m{h, w, std::vector<uint8_t>(bytes.size())};
    for (size_t i = 0; i < bytes.size(); ++i) m.bits[i] = bytes[i] >= 128 ? 1 : 0;
    return m;
}

Tensor<float> image_to_tensor(const Image& img) {
    Tensor<float> t = Tensor<float>::zeros({3, img.height, img.width});
    float* p = t.data().data();
    int64_t hw = (int64_t)img.height * img.width;
    for (int64_t i = 0; i < hw; ++i)
        for (int c = 0; c < 3; ++c)
            p[c * hw + i] = (float)img.rgb[3 * i + c] / 127.5f - 1.0f;
    return t;
}

Image tensor_to_image(const Tensor<float>& t) {
    Shape s = t.shape();
    if (s.size() == 4 && s[0] == 1) s = {s[1], s[2], s[3]};
    if (s.size() != 3 || s[0] != 3)
        throw std::invalid_argument("tensor_to_image: expected [3,H,W], got " +
                                    shape_str(t.shape()));
    int h = s[1], w = s[2];
    int64_t hw = (int64_t)h * w;
    Image img{h, w, std::vector<uint8_t>((size_t)3 * hw)};
    const float* p = t.data().data();
    for (int64_t i = 0; i < hw; ++i)
        for (int c = 0; c < 3; ++c) {
            float v = (p[c * hw + i] + 1.0f) * 127.5f;
            img.rgb[3 * i + c] = (uint8_t)std::lround(std::min(255.0f, std::max(0.0f, v)));
        }
    return img;
}

Tensor<float> mask_to_tensor(const PixelMask& m) {
    Tensor<float> t = Tensor<float>::zeros({1, 1, m.height, m.width});
    for (size_t i = 0; i < m.bits.size(); ++i) t.data()[i] = (float)m.bits[i];
    return t;
}

Tensor<float> latent_mask_to_tensor(const LatentMask& m) {
    Tensor<float> t = Tensor<float>::zeros({1, 1, m.height, m.width});
    for (size_t i = 0; i < m.bits.size(); ++i) t.data()[i] = (float)m.bits[i];
    return t;
}

}  // namespace bldlab
