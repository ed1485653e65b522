#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bldlab/image.hpp"
#include "bldlab/mask.hpp"

namespace bldlab {

// Color Distance: mean Euclidean RGB distance (byte scale) over all
// 4-connected cross-boundary pixel pairs of the mask.
double color_distance(const Image& img, const PixelMask& mask);

struct PsnrValue {
    bool exact = false;  // identical pixels in the region; PSNR is infinite
    double db = 0;
};

enum class Region { preserved, generated };

PsnrValue masked_psnr(const Image& output, const Image& reference, const PixelMask& mask,
                      Region region);

// Full-image mean squared error, byte scale.
double image_mse(const Image& a, const Image& b);

struct EvalRow {
    std::string stem;
    double cd = 0;
    PsnrValue psnr_preserved;
    PsnrValue psnr_generated;
    double recon_mse = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::vector<std::string> missing;  // stems skipped with the reason
    double mean_cd = 0;
    double mean_recon_mse = 0;
    double mean_psnr_preserved = 0;  // over rows with finite psnr
    double mean_psnr_generated = 0;
    int exact_preserved = 0;
    int exact_generated = 0;
};

// Walks <results>/<stem>.ppm against <masks>/<stem>.pgm and
// <refs>/<stem>.ppm; missing counterparts are reported per stem and the run
// continues. Row order is sorted by stem, independent of directory order.
EvalReport evaluate_run(const std::string& results_dir, const std::string& masks_dir,
                        const std::string& refs_dir);

// CSV (one row per image) and JSON (aggregate + per-image) artifacts.
void write_eval_csv(const EvalReport& report, const std::string& path);
void write_eval_json(const EvalReport& report, const std::string& path,
                     const std::string& results_dir, const std::string& masks_dir,
                     const std::string& refs_dir);

}  // namespace bldlab
