#include "bldlab/mask.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "bldlab/tensor.hpp"

namespace bldlab {

LatentMask resize_to_latent(const PixelMask& m, int factor) {
    if (factor < 1 || m.height % factor != 0 || m.width % factor != 0)
        throw std::invalid_argument("resize_to_latent: mask " + std::to_string(m.width) +
                                    "x" + std::to_string(m.height) +
                                    " not divisible by factor " + std::to_string(factor));
    int lh = m.height / factor, lw = m.width / factor;
    LatentMask out{lh, lw, std::vector<uint8_t>((size_t)lh * lw, 0)};
    double block = (double)factor * factor;
    for (int cy = 0; cy < lh; ++cy)
        for (int cx = 0; cx < lw; ++cx) {
            int count = 0;
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx)
                    count += m.at(cy * factor + dy, cx * factor + dx);
            out.bits[(size_t)cy * lw + cx] = ((double)count / block >= 0.999) ? 1 : 0;
        }
    return out;
}

namespace {

struct Pt {
    int64_t x, y;
};

int64_t cross(const Pt& o, const Pt& a, const Pt& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Andrew's monotone chain; returns hull in counter-clockwise order, may
// degenerate to 1 or 2 points.
std::vector<Pt> convex_hull(std::vector<Pt> pts) {
    std::sort(pts.begin(), pts.end(),
              [](const Pt& a, const Pt& b) { return a.x != b.x ? a.x < b.x : a.y < b.y; });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const Pt& a, const Pt& b) { return a.x == b.x && a.y == b.y; }),
              pts.end());
    int n = (int)pts.size();
    if (n <= 2) return pts;
    std::vector<Pt> hull(2 * n);
    int k = 0;
    for (int i = 0; i < n; ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    int lower = k + 1;
    for (int i = n - 2; i >= 0; --i) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

bool on_segment(const Pt& a, const Pt& b, const Pt& p) {
    if (cross(a, b, p) != 0) return false;
    return p.x >= std::min(a.x, b.x) && p.x <= std::max(a.x, b.x) &&
           p.y >= std::min(a.y, b.y) && p.y <= std::max(a.y, b.y);
}

bool inside_hull(const std::vector<Pt>& hull, const Pt& p) {
    if (hull.size() == 1) return p.x == hull[0].x && p.y == hull[0].y;
    if (hull.size() == 2) return on_segment(hull[0], hull[1], p);
    for (size_t i = 0; i < hull.size(); ++i) {
        const Pt& a = hull[i];
        const Pt& b = hull[(i + 1) % hull.size()];
        if (cross(a, b, p) < 0) return false;  // hull is CCW
    }
    return true;
}

// Separable square-structuring-element dilation of the zero-region.
void dilate_zero_region(PixelMask& m, int radius) {
    if (radius <= 0) return;
    PixelMask tmp = m;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            uint8_t v = 1;
            for (int dx = -radius; dx <= radius && v; ++dx) {
                int xx = x + dx;
                if (xx >= 0 && xx < m.width && m.at(y, xx) == 0) v = 0;
            }
            tmp.at(y, x) = v;
        }
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            uint8_t v = 1;
            for (int dy = -radius; dy <= radius && v; ++dy) {
                int yy = y + dy;
                if (yy >= 0 && yy < m.height && tmp.at(yy, x) == 0) v = 0;
            }
            m.at(y, x) = v;
        }
}

}  // namespace

PixelMask convex_hull_expand(const PixelMask& m, int expand_px) {
    std::vector<Pt> zeros;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(y, x) == 0) zeros.push_back({x, y});
    if (zeros.empty())
        throw std::invalid_argument("convex_hull_expand: mask has no zero-region");
    std::vector<Pt> hull = convex_hull(zeros);
    PixelMask out = PixelMask::filled(m.height, m.width, 1);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (inside_hull(hull, {x, y})) out.at(y, x) = 0;
    dilate_zero_region(out, expand_px);
    return out;
}

namespace {

struct MaskShape {
    bool ellipse;
    Box box;
};

void paint_zero(PixelMask& m, const MaskShape& s) {
    if (!s.ellipse) {
        for (int y = s.box.y0; y < s.box.y1; ++y)
            for (int x = s.box.x0; x < s.box.x1; ++x) m.at(y, x) = 0;
        return;
    }
    double cx = (s.box.x0 + s.box.x1 - 1) * 0.5;
    double cy = (s.box.y0 + s.box.y1 - 1) * 0.5;
    double rx = std::max(0.5, (s.box.x1 - s.box.x0) * 0.5);
    double ry = std::max(0.5, (s.box.y1 - s.box.y0) * 0.5);
    for (int y = s.box.y0; y < s.box.y1; ++y)
        for (int x = s.box.x0; x < s.box.x1; ++x) {
            double dx = (x - cx) / rx, dy = (y - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) m.at(y, x) = 0;
        }
}

}  // namespace

PixelMask random_background_mask(int height, int width, const Box& foreground,
                                 uint64_t seed) {
    if (foreground.x0 < 0 || foreground.y0 < 0 || foreground.x1 > width ||
        foreground.y1 > height || foreground.width() < 0 || foreground.height() < 0)
        throw std::invalid_argument("random_background_mask: foreground box outside image");
    int64_t total = (int64_t)height * width;
    if (foreground.area() > (int64_t)(0.6 * (double)total))
        throw std::invalid_argument(
            "random_background_mask: foreground box covers > 60% of image (" +
            std::to_string(foreground.area()) + " of " + std::to_string(total) + " px)");

    Rng rng(seed);
    int max_side = std::max(4, std::min(width, height) / 2);
    for (int attempt = 0; attempt < 1000; ++attempt) {
        PixelMask m = PixelMask::filled(height, width, 1);
        int target_shapes = (int)rng.uniform_int(1, 3);
        int placed = 0;
        int64_t zero_count = 0;
        // aims for target_shapes but may top up to 3 while the area is short
        for (int tries = 0; tries < 400 && placed < 3; ++tries) {
            int w = (int)rng.uniform_int(4, max_side);
            int h = (int)rng.uniform_int(4, max_side);
            if (w > width || h > height) continue;
            int x0 = (int)rng.uniform_int(0, width - w);
            int y0 = (int)rng.uniform_int(0, height - h);
            MaskShape s{rng.uniform() < 0.5, Box{x0, y0, x0 + w, y0 + h}};
            if (s.box.intersects(foreground)) continue;
            paint_zero(m, s);
            ++placed;
            zero_count = 0;
            for (uint8_t b : m.bits) zero_count += (b == 0);
            if (placed >= target_shapes && zero_count >= (int64_t)(0.10 * (double)total))
                break;
            if (zero_count > (int64_t)(0.40 * (double)total)) break;
        }
        double ratio = (double)zero_count / (double)total;
        if (placed >= 1 && ratio >= 0.10 && ratio <= 0.40) return m;
    }
    throw std::runtime_error(
        "random_background_mask: failed to reach 10-40% area outside the foreground box");
}

PixelMask border_mask(int height, int width, double keep_ratio) {
    if (!(keep_ratio > 0.0 && keep_ratio < 1.0))
        throw std::invalid_argument("border_mask: keep_ratio " + std::to_string(keep_ratio) +
                                    " outside (0,1)");
    int kw = (int)std::lround(width * keep_ratio);
    int kh = (int)std::lround(height * keep_ratio);
    if (kw < 1 || kh < 1)
        throw std::invalid_argument("border_mask: preserved center degenerates below 1 px");
    kw = std::min(kw, width);
    kh = std::min(kh, height);
    int x0 = (width - kw) / 2;   // odd margins lean toward the top-left
    int y0 = (height - kh) / 2;
    PixelMask m = PixelMask::filled(height, width, 0);
    for (int y = y0; y < y0 + kh; ++y)
        for (int x = x0; x < x0 + kw; ++x) m.at(y, x) = 1;
    return m;
}

std::vector<BoundaryPair> boundary_pairs(const PixelMask& m) {
    bool has0 = false, has1 = false;
    for (uint8_t b : m.bits) (b ? has1 : has0) = true;
    if (!has0 || !has1)
        throw std::invalid_argument("boundary_pairs: mask is uniform, no boundary exists");
    std::vector<BoundaryPair> pairs;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            uint8_t v = m.at(y, x);
            if (x + 1 < m.width) {
                uint8_t r = m.at(y, x + 1);
                if (v == 1 && r == 0) pairs.push_back({y, x, y, x + 1});
                if (v == 0 && r == 1) pairs.push_back({y, x + 1, y, x});
            }
            if (y + 1 < m.height) {
                uint8_t d = m.at(y + 1, x);
                if (v == 1 && d == 0) pairs.push_back({y, x, y + 1, x});
                if (v == 0 && d == 1) pairs.push_back({y + 1, x, y, x});
            }
        }
    return pairs;
}

}  // namespace bldlab
