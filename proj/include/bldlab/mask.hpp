#pragma once

#include <cstdint>
#include <vector>

namespace bldlab {

// Project-wide convention: 1 = preserved/unchanged region, 0 = region to
// generate.

struct PixelMask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> bits;  // row-major, values in {0,1}

    uint8_t at(int y, int x) const { return bits[(size_t)y * width + x]; }
    uint8_t& at(int y, int x) { return bits[(size_t)y * width + x]; }

    static PixelMask filled(int h, int w, uint8_t value) {
        return {h, w, std::vector<uint8_t>((size_t)h * w, value)};
    }
};

struct LatentMask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> bits;

    uint8_t at(int y, int x) const { return bits[(size_t)y * width + x]; }
};

struct MaskPair {
    PixelMask pixel;
    LatentMask latent;
};

// Half-open box [x0,x1) x [y0,y1) in pixel coordinates.
struct Box {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    int64_t area() const { return (int64_t)width() * height(); }
    bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    bool intersects(const Box& o) const {
        return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
    }
};

// A latent cell is preserved only when its whole factor x factor pixel block
// is preserved (block mean >= 0.999).
LatentMask resize_to_latent(const PixelMask& m, int factor);

// Replaces the zero-region by its filled convex hull dilated with a square
// structuring element of radius expand_px.
PixelMask convex_hull_expand(const PixelMask& m, int expand_px);

// Training mask: 1-3 random rectangles/ellipses placed entirely outside the
// reserved foreground box; zero-region covers 10-40% of the image.
PixelMask random_background_mask(int height, int width, const Box& foreground,
                                 uint64_t seed);

// Outpainting mask: preserved centered rectangle of side ratio keep_ratio per
// axis, border marked for generation.
PixelMask border_mask(int height, int width, double keep_ratio);

struct BoundaryPair {
    int preserved_y, preserved_x;
    int generated_y, generated_x;
};

// All 4-connected (preserved, generated) pixel pairs in row-major order.
std::vector<BoundaryPair> boundary_pairs(const PixelMask& m);

}  // namespace bldlab
