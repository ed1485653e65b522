#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include "bldlab/data.hpp"

namespace fs = std::filesystem;

namespace bldlab {

namespace {

struct Rgb {
    double r, g, b;
};

Rgb random_color(Rng& rng) {
    return {rng.uniform(0, 255), rng.uniform(0, 255), rng.uniform(0, 255)};
}

// Keeps per-pixel gradient steps within the smoothness budget (<= 4
// byte-levels between 4-neighbors after rounding).
Rgb clamp_toward(const Rgb& from, const Rgb& to, double max_delta) {
    auto clamp1 = [&](double a, double b) {
        if (b > a + max_delta) return a + max_delta;
        if (b < a - max_delta) return a - max_delta;
        return b;
    };
    return {clamp1(from.r, to.r), clamp1(from.g, to.g), clamp1(from.b, to.b)};
}

uint8_t to_byte(double v) {
    return (uint8_t)std::lround(std::min(255.0, std::max(0.0, v)));
}

void paint_background(Image& img, Rng& rng) {
    Rgb c0 = random_color(rng);
    Rgb c1 = clamp_toward(c0, random_color(rng), 3.5 * (kSceneSize - 1));
    double theta = rng.uniform(0.0, 3.14159265358979323846);
    double ux = std::cos(theta), uy = std::sin(theta);
    double span = (std::abs(ux) + std::abs(uy)) * (kSceneSize - 1);
    double smin = std::min(0.0, ux * (kSceneSize - 1)) + std::min(0.0, uy * (kSceneSize - 1));
    for (int y = 0; y < kSceneSize; ++y)
        for (int x = 0; x < kSceneSize; ++x) {
            double s = (ux * x + uy * y - smin) / span;
            img.at(y, x, 0) = to_byte(c0.r + (c1.r - c0.r) * s);
            img.at(y, x, 1) = to_byte(c0.g + (c1.g - c0.g) * s);
            img.at(y, x, 2) = to_byte(c0.b + (c1.b - c0.b) * s);
        }
}

struct FgBounds {
    int x0 = kSceneSize, y0 = kSceneSize, x1 = -1, y1 = -1;
    void cover(int x, int y) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
    }
};

// Solid or linear-gradient fill between two free colors; foreground shapes
// are allowed to be sharp, only the background carries the smoothness
// invariant.
struct Fill {
    Rgb a, b;
    bool gradient;
    double ux, uy;

    Rgb at(int x, int y, const Box& box) const {
        if (!gradient) return a;
        double span = (std::abs(ux) * std::max(1, box.width() - 1) +
                       std::abs(uy) * std::max(1, box.height() - 1));
        if (span < 1e-9) return a;
        double smin = std::min(0.0, ux * (box.width() - 1)) +
                      std::min(0.0, uy * (box.height() - 1));
        double s = (ux * (x - box.x0) + uy * (y - box.y0) - smin) / span;
        return {a.r + (b.r - a.r) * s, a.g + (b.g - a.g) * s, a.b + (b.b - a.b) * s};
    }
};

Fill random_fill(Rng& rng) {
    Fill f;
    f.a = random_color(rng);
    f.b = random_color(rng);
    f.gradient = rng.uniform() < 0.5;
    double theta = rng.uniform(0.0, 3.14159265358979323846);
    f.ux = std::cos(theta);
    f.uy = std::sin(theta);
    return f;
}

void put_pixel(Image& img, FgBounds& fb, int x, int y, const Rgb& c) {
    img.at(y, x, 0) = to_byte(c.r);
    img.at(y, x, 1) = to_byte(c.g);
    img.at(y, x, 2) = to_byte(c.b);
    fb.cover(x, y);
}

void paint_shape(Image& img, FgBounds& fb, int type, const Box& zone, Rng& rng) {
    Fill fill = random_fill(rng);
    if (type == 0) {  // circle
        int rmax = std::max(4, std::min(zone.width(), zone.height()) / 2 - 1);
        int r = (int)rng.uniform_int(4, rmax);
        int cx = (int)rng.uniform_int(zone.x0 + r, zone.x1 - 1 - r);
        int cy = (int)rng.uniform_int(zone.y0 + r, zone.y1 - 1 - r);
        Box bb{cx - r, cy - r, cx + r + 1, cy + r + 1};
        for (int y = bb.y0; y < bb.y1; ++y)
            for (int x = bb.x0; x < bb.x1; ++x)
                if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
                    put_pixel(img, fb, x, y, fill.at(x, y, bb));
    } else if (type == 1) {  // rectangle
        int w = (int)rng.uniform_int(5, std::max(5, zone.width() - 2));
        int h = (int)rng.uniform_int(5, std::max(5, zone.height() - 2));
        int x0 = (int)rng.uniform_int(zone.x0, zone.x1 - w);
        int y0 = (int)rng.uniform_int(zone.y0, zone.y1 - h);
        Box bb{x0, y0, x0 + w, y0 + h};
        for (int y = bb.y0; y < bb.y1; ++y)
            for (int x = bb.x0; x < bb.x1; ++x) put_pixel(img, fb, x, y, fill.at(x, y, bb));
    } else {  // stripe spanning the zone
        bool horizontal = rng.uniform() < 0.5;
        int thickness = (int)rng.uniform_int(3, 6);
        if (horizontal) {
            int y0 = (int)rng.uniform_int(zone.y0, std::max(zone.y0, zone.y1 - thickness));
            Box bb{zone.x0, y0, zone.x1, std::min(zone.y1, y0 + thickness)};
            for (int y = bb.y0; y < bb.y1; ++y)
                for (int x = bb.x0; x < bb.x1; ++x)
                    put_pixel(img, fb, x, y, fill.at(x, y, bb));
        } else {
            int x0 = (int)rng.uniform_int(zone.x0, std::max(zone.x0, zone.x1 - thickness));
            Box bb{x0, zone.y0, std::min(zone.x1, x0 + thickness), zone.y1};
            for (int y = bb.y0; y < bb.y1; ++y)
                for (int x = bb.x0; x < bb.x1; ++x)
                    put_pixel(img, fb, x, y, fill.at(x, y, bb));
        }
    }
}

}  // namespace

Scene generate_scene(uint64_t scene_seed) {
    Rng rng(scene_seed);
    Scene scene;
    scene.seed = scene_seed;
    scene.image = Image::filled(kSceneSize, kSceneSize, 0, 0, 0);
    paint_background(scene.image, rng);

    int zw = (int)rng.uniform_int(18, 36);
    int zh = (int)rng.uniform_int(18, 36);
    int zx = (int)rng.uniform_int(0, kSceneSize - zw);
    int zy = (int)rng.uniform_int(0, kSceneSize - zh);
    Box zone{zx, zy, zx + zw, zy + zh};

    int count = (int)rng.uniform_int(1, 3);
    int first_type = (int)rng.uniform_int(0, 2);
    if (count == 1)
        scene.cls = first_type;
    else if (count == 2)
        scene.cls = 3 + first_type;
    else
        scene.cls = 6 + (first_type > 0 ? 1 : 0);

    FgBounds fb;
    for (int i = 0; i < count; ++i) {
        int type = i == 0 ? first_type : (int)rng.uniform_int(0, 2);
        paint_shape(scene.image, fb, type, zone, rng);
    }
    scene.fg_box = Box{fb.x0, fb.y0, fb.x1 + 1, fb.y1 + 1};
    scene.train_mask = random_background_mask(kSceneSize, kSceneSize, scene.fg_box,
                                              derive_seed(scene_seed, "train-mask"));
    return scene;
}

std::vector<Scene> generate_scenes(int count, uint64_t root_seed, int first_index,
                                   int threads) {
    if (count < 1) throw std::invalid_argument("generate_scenes: count must be >= 1");
    std::vector<Scene> scenes(count);
    auto work = [&](int begin, int end) {
        for (int i = begin; i < end; ++i)
            scenes[i] = generate_scene(derive_seed(root_seed, "scene", first_index + i));
    };
    threads = std::max(1, std::min(threads, count));
    if (threads == 1) {
        work(0, count);
    } else {
        std::vector<std::thread> pool;
        int chunk = (count + threads - 1) / threads;
        for (int w = 0; w < threads; ++w)
            pool.emplace_back(work, w * chunk, std::min(count, (w + 1) * chunk));
        for (auto& th : pool) th.join();
    }
    return scenes;
}

namespace {

std::string scene_stem(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%05d", index);
    return buf;
}

}  // namespace

void write_dataset(const std::string& dir, const std::vector<Scene>& scenes, int count,
                   uint64_t root_seed) {
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["count"] = count;
    manifest["seed"] = root_seed;
    manifest["image_size"] = kSceneSize;
    manifest["classes"] = kSceneClasses;
    nlohmann::json list = nlohmann::json::array();
    for (size_t i = 0; i < scenes.size(); ++i) {
        const Scene& s = scenes[i];
        std::string stem = scene_stem((int)i);
        write_ppm(dir + "/" + stem + ".ppm", s.image);
        write_pgm(dir + "/" + stem + "_mask.pgm", s.train_mask);
        list.push_back({{"stem", stem},
                        {"seed", s.seed},
                        {"class", s.cls},
                        {"box", {s.fg_box.x0, s.fg_box.y0, s.fg_box.x1, s.fg_box.y1}}});
    }
    manifest["scenes"] = std::move(list);
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw std::runtime_error("dataset: cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

Dataset read_manifest(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw std::runtime_error("dataset: cannot open " + dir + "/manifest.json");
    nlohmann::json j;
    in >> j;
    Dataset ds;
    ds.dir = dir;
    ds.root_seed = j.at("seed").get<uint64_t>();
    for (const auto& e : j.at("scenes")) {
        DatasetEntry entry;
        entry.stem = e.at("stem").get<std::string>();
        entry.seed = e.at("seed").get<uint64_t>();
        entry.cls = e.at("class").get<int>();
        auto box = e.at("box");
        entry.fg_box = Box{box[0].get<int>(), box[1].get<int>(), box[2].get<int>(),
                           box[3].get<int>()};
        ds.entries.push_back(std::move(entry));
    }
    return ds;
}

Image load_dataset_image(const Dataset& ds, size_t index) {
    return read_ppm(ds.dir + "/" + ds.entries.at(index).stem + ".ppm");
}

PixelMask load_dataset_mask(const Dataset& ds, size_t index) {
    return read_pgm(ds.dir + "/" + ds.entries.at(index).stem + "_mask.pgm");
}

}  // namespace bldlab
