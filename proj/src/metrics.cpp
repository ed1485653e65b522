#include "bldlab/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace bldlab {

double color_distance(const Image& img, const PixelMask& mask) {
    if (img.height != mask.height || img.width != mask.width)
        throw std::invalid_argument("color_distance: image " + std::to_string(img.width) +
                                    "x" + std::to_string(img.height) + " vs mask " +
                                    std::to_string(mask.width) + "x" +
                                    std::to_string(mask.height));
    auto pairs = boundary_pairs(mask);  // throws on uniform masks
    double total = 0;
    for (const auto& p : pairs) {
        double acc = 0;
        for (int c = 0; c < 3; ++c) {
            double d = (double)img.at(p.preserved_y, p.preserved_x, c) -
                       (double)img.at(p.generated_y, p.generated_x, c);
            acc += d * d;
        }
        total += std::sqrt(acc);
    }
    return total / (double)pairs.size();
}

PsnrValue masked_psnr(const Image& output, const Image& reference, const PixelMask& mask,
                      Region region) {
    if (output.height != reference.height || output.width != reference.width ||
        output.height != mask.height || output.width != mask.width)
        throw std::invalid_argument("masked_psnr: shape mismatch between images and mask");
    uint8_t want = region == Region::preserved ? 1 : 0;
    int64_t count = 0;
    double sq = 0;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(y, x) != want) continue;
            for (int c = 0; c < 3; ++c) {
                double d = (double)output.at(y, x, c) - (double)reference.at(y, x, c);
                sq += d * d;
            }
            ++count;
        }
    if (count == 0)
        throw std::invalid_argument("masked_psnr: selected region is empty");
    double mse = sq / (double)(count * 3);
    if (mse == 0.0) return {true, 0.0};
    return {false, 10.0 * std::log10(255.0 * 255.0 / mse)};
}

double image_mse(const Image& a, const Image& b) {
    if (a.height != b.height || a.width != b.width)
        throw std::invalid_argument("image_mse: shape mismatch");
    double sq = 0;
    for (size_t i = 0; i < a.rgb.size(); ++i) {
        double d = (double)a.rgb[i] - (double)b.rgb[i];
        sq += d * d;
    }
    return sq / (double)a.rgb.size();
}

EvalReport evaluate_run(const std::string& results_dir, const std::string& masks_dir,
                        const std::string& refs_dir) {
    EvalReport report;
    std::vector<std::string> stems;
    if (fs::exists(results_dir))
        for (const auto& e : fs::directory_iterator(results_dir))
            if (e.path().extension() == ".ppm") stems.push_back(e.path().stem().string());
    std::sort(stems.begin(), stems.end());

    double sum_cd = 0, sum_mse = 0, sum_pp = 0, sum_pg = 0;
    int n_pp = 0, n_pg = 0;
    for (const auto& stem : stems) {
        std::string mask_path = masks_dir + "/" + stem + ".pgm";
        std::string ref_path = refs_dir + "/" + stem + ".ppm";
        if (!fs::exists(mask_path)) {
            report.missing.push_back(stem + ": missing mask " + mask_path);
            continue;
        }
        if (!fs::exists(ref_path)) {
            report.missing.push_back(stem + ": missing reference " + ref_path);
            continue;
        }
        Image out = read_ppm(results_dir + "/" + stem + ".ppm");
        Image ref = read_ppm(ref_path);
        PixelMask mask = read_pgm(mask_path);
        EvalRow row;
        row.stem = stem;
        try {
            row.cd = color_distance(out, mask);
            row.psnr_preserved = masked_psnr(out, ref, mask, Region::preserved);
            row.psnr_generated = masked_psnr(out, ref, mask, Region::generated);
            row.recon_mse = image_mse(out, ref);
        } catch (const std::exception& e) {
            report.missing.push_back(stem + ": " + e.what());
            continue;
        }
        sum_cd += row.cd;
        sum_mse += row.recon_mse;
        if (row.psnr_preserved.exact)
            ++report.exact_preserved;
        else {
            sum_pp += row.psnr_preserved.db;
            ++n_pp;
        }
        if (row.psnr_generated.exact)
            ++report.exact_generated;
        else {
            sum_pg += row.psnr_generated.db;
            ++n_pg;
        }
        report.rows.push_back(std::move(row));
    }
    size_t n = report.rows.size();
    report.mean_cd = n ? sum_cd / (double)n : 0.0;
    report.mean_recon_mse = n ? sum_mse / (double)n : 0.0;
    report.mean_psnr_preserved = n_pp ? sum_pp / n_pp : 0.0;
    report.mean_psnr_generated = n_pg ? sum_pg / n_pg : 0.0;
    return report;
}

namespace {

std::string psnr_str(const PsnrValue& v) {
    if (v.exact) return "exact";
    std::ostringstream os;
    os << v.db;
    return os.str();
}

nlohmann::json psnr_json(const PsnrValue& v) {
    if (v.exact) return "exact";
    return v.db;
}

}  // namespace

void write_eval_csv(const EvalReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("eval: cannot write " + path);
    out << "stem,cd,psnr_preserved,psnr_generated,mse\n";
    for (const auto& row : report.rows)
        out << row.stem << "," << row.cd << "," << psnr_str(row.psnr_preserved) << ","
            << psnr_str(row.psnr_generated) << "," << row.recon_mse << "\n";
}

void write_eval_json(const EvalReport& report, const std::string& path,
                     const std::string& results_dir, const std::string& masks_dir,
                     const std::string& refs_dir) {
    nlohmann::json j;
    j["results_dir"] = results_dir;
    j["masks_dir"] = masks_dir;
    j["refs_dir"] = refs_dir;
    j["count"] = report.rows.size();
    j["mean_cd"] = report.mean_cd;
    j["mean_recon_mse"] = report.mean_recon_mse;
    j["mean_psnr_preserved"] = report.mean_psnr_preserved;
    j["mean_psnr_generated"] = report.mean_psnr_generated;
    j["exact_preserved"] = report.exact_preserved;
    j["exact_generated"] = report.exact_generated;
    j["missing"] = report.missing;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : report.rows)
        rows.push_back({{"stem", row.stem},
                        {"cd", row.cd},
                        {"psnr_preserved", psnr_json(row.psnr_preserved)},
                        {"psnr_generated", psnr_json(row.psnr_generated)},
                        {"mse", row.recon_mse}});
    j["rows"] = std::move(rows);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("eval: cannot write " + path);
    out << j.dump(2) << "\n";
}

}  // namespace bldlab
