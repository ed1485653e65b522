#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "bldlab/data.hpp"
#include "bldlab/metrics.hpp"

using namespace bldlab;
namespace fs = std::filesystem;

TEST_CASE("color distance is zero on uniform images and 255*sqrt(3) on a b/w split") {
    Image uniform = Image::filled(8, 8, 120, 40, 200);
    PixelMask mask = PixelMask::filled(8, 8, 1);
    for (int y = 0; y < 8; ++y)
        for (int x = 4; x < 8; ++x) mask.at(y, x) = 0;
    CHECK(color_distance(uniform, mask) == 0.0);

    Image split = Image::filled(8, 8, 0, 0, 0);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c) split.at(y, x, c) = 255;
    double expected = 255.0 * std::sqrt(3.0);
    CHECK(color_distance(split, mask) == doctest::Approx(expected).epsilon(1e-9));
    CHECK(expected == doctest::Approx(441.673).epsilon(1e-5));

    CHECK_THROWS_AS(color_distance(uniform, PixelMask::filled(8, 8, 1)),
                    std::invalid_argument);
}

TEST_CASE("color distance matches the brute-force cross-boundary loop exactly") {
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        Image img = Image::filled(16, 16, 0, 0, 0);
        for (auto& b : img.rgb) b = (uint8_t)rng.uniform_int(0, 255);
        PixelMask m = PixelMask::filled(16, 16, 1);
        for (auto& b : m.bits) b = rng.uniform() < 0.5 ? 1 : 0;
        bool has0 = false, has1 = false;
        for (uint8_t b : m.bits) (b ? has1 : has0) = true;
        if (!has0 || !has1) continue;

        double total = 0;
        int count = 0;
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                for (auto [dy, dx] : {std::pair{0, 1}, std::pair{1, 0}}) {
                    int yy = y + dy, xx = x + dx;
                    if (yy >= 16 || xx >= 16) continue;
                    if (m.at(y, x) == m.at(yy, xx)) continue;
                    double acc = 0;
                    for (int c = 0; c < 3; ++c) {
                        double d = (double)img.at(y, x, c) - (double)img.at(yy, xx, c);
                        acc += d * d;
                    }
                    total += std::sqrt(acc);
                    ++count;
                }
        CHECK(color_distance(img, m) == doctest::Approx(total / count).epsilon(1e-12));

        // swapping which side counts as preserved leaves CD unchanged
        PixelMask inverted = m;
        for (auto& b : inverted.bits) b = 1 - b;
        CHECK(color_distance(img, m) ==
              doctest::Approx(color_distance(img, inverted)).epsilon(1e-12));
    }
}

TEST_CASE("masked psnr distinguishes exact regions and matches the closed form") {
    Image ref = Image::filled(8, 8, 100, 100, 100);
    Image same = ref;
    PixelMask mask = PixelMask::filled(8, 8, 1);
    for (int y = 4; y < 8; ++y)
        for (int x = 0; x < 8; ++x) mask.at(y, x) = 0;

    auto exact = masked_psnr(same, ref, mask, Region::preserved);
    CHECK(exact.exact);

    Image off = ref;
    for (auto& b : off.rgb) b = (uint8_t)(b + 1);
    auto one = masked_psnr(off, ref, mask, Region::preserved);
    CHECK_FALSE(one.exact);
    CHECK(one.db == doctest::Approx(48.1308).epsilon(1e-4));

    // corrupting only generated pixels leaves the preserved region exact
    Image corrupted = ref;
    for (int y = 4; y < 8; ++y)
        for (int x = 0; x < 8; ++x) corrupted.at(y, x, 1) = 255;
    CHECK(masked_psnr(corrupted, ref, mask, Region::preserved).exact);
    CHECK_FALSE(masked_psnr(corrupted, ref, mask, Region::generated).exact);

    CHECK_THROWS_AS(masked_psnr(ref, ref, PixelMask::filled(8, 8, 1), Region::generated),
                    std::invalid_argument);
}

TEST_CASE("evaluate_run walks triples by stem and tolerates missing files") {
    auto dir = fs::temp_directory_path() / "bldlab_eval_test";
    fs::remove_all(dir);
    std::string results = (dir / "results").string();
    std::string masks = (dir / "masks").string();
    std::string refs = (dir / "refs").string();
    fs::create_directories(results);
    fs::create_directories(masks);
    fs::create_directories(refs);

    auto empty = evaluate_run(results, masks, refs);
    CHECK(empty.rows.empty());
    CHECK(empty.missing.empty());

    // one full triple
    auto scene = generate_scene(999);
    write_ppm(results + "/a.ppm", scene.image);
    write_ppm(refs + "/a.ppm", scene.image);
    write_pgm(masks + "/a.pgm", scene.train_mask);
    // one with a missing mask
    write_ppm(results + "/b.ppm", scene.image);
    write_ppm(refs + "/b.ppm", scene.image);

    auto report = evaluate_run(results, masks, refs);
    REQUIRE(report.rows.size() == 1);
    CHECK(report.rows[0].stem == "a");
    CHECK(report.rows[0].recon_mse == 0.0);
    CHECK(report.rows[0].psnr_preserved.exact);
    CHECK(report.mean_cd == doctest::Approx(report.rows[0].cd).epsilon(1e-12));
    CHECK(report.mean_recon_mse == doctest::Approx(0.0).epsilon(1e-12));
    REQUIRE(report.missing.size() == 1);
    CHECK(report.missing[0].find("b") == 0);

    write_eval_csv(report, (dir / "eval.csv").string());
    write_eval_json(report, (dir / "eval.json").string(), results, masks, refs);
    CHECK(fs::exists(dir / "eval.csv"));
    CHECK(fs::exists(dir / "eval.json"));
    fs::remove_all(dir);
}

TEST_CASE("evaluate_run output is independent of file creation order") {
    auto dir = fs::temp_directory_path() / "bldlab_eval_order";
    fs::remove_all(dir);
    std::vector<Scene> scenes;
    for (int i = 0; i < 3; ++i) scenes.push_back(generate_scene(derive_seed(7, "scene", i)));

    auto populate = [&](const std::string& base, bool reversed) {
        fs::create_directories(base + "/results");
        fs::create_directories(base + "/masks");
        fs::create_directories(base + "/refs");
        std::vector<int> order = {0, 1, 2};
        if (reversed) order = {2, 1, 0};
        for (int i : order) {
            std::string stem = "s" + std::to_string(i);
            write_ppm(base + "/results/" + stem + ".ppm", scenes[i].image);
            write_ppm(base + "/refs/" + stem + ".ppm", scenes[(i + 1) % 3].image);
            write_pgm(base + "/masks/" + stem + ".pgm", scenes[i].train_mask);
        }
        return evaluate_run(base + "/results", base + "/masks", base + "/refs");
    };
    auto fwd = populate((dir / "fwd").string(), false);
    auto rev = populate((dir / "rev").string(), true);
    REQUIRE(fwd.rows.size() == rev.rows.size());
    for (size_t i = 0; i < fwd.rows.size(); ++i) {
        CHECK(fwd.rows[i].stem == rev.rows[i].stem);
        CHECK(fwd.rows[i].cd == rev.rows[i].cd);
        CHECK(fwd.rows[i].recon_mse == rev.rows[i].recon_mse);
    }
    CHECK(fwd.mean_cd == rev.mean_cd);
    fs::remove_all(dir);
}
