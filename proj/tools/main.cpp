// bldlab: data generation, VAE and denoiser training, blended-latent
// inpainting/outpainting, evaluation, and self-verification in one tool.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "bldlab/blas.hpp"
#include "bldlab/data.hpp"
#include "bldlab/metrics.hpp"
#include "bldlab/pipeline.hpp"
#include "bldlab/trainer.hpp"
#include "bldlab/verify.hpp"

namespace fs = std::filesystem;
using namespace bldlab;

namespace {

struct CommonOpts {
    uint64_t seed = 0;
    std::string out_dir = "out";
    int threads = 0;  // 0 = hardware concurrency
};

void add_common(CLI::App* sub, CommonOpts& c) {
    sub->add_option("--seed", c.seed, "root seed; all randomness derives from it");
    sub->add_option("--out-dir", c.out_dir, "directory for all outputs");
    sub->add_option("--threads", c.threads, "worker threads (0 = all hardware threads)");
    sub->set_config("--config", "", "key=value config file (flags win over file)");
}

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? (int)hw : 1;
}

using ConfigEcho = std::map<std::string, std::string>;

void write_resolved_config(const std::string& dir, const ConfigEcho& kv) {
    fs::create_directories(dir);
    std::ofstream out(dir + "/resolved_config.txt");
    if (!out) throw std::runtime_error("cannot write " + dir + "/resolved_config.txt");
    for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

void emit_summary(const nlohmann::json& j) { std::cout << j.dump() << "\n"; }

// ---------------------------------------------------------------------------
// dataset loading for the training commands
// ---------------------------------------------------------------------------

struct LoadedScene {
    Tensor<float> image;      // [1,3,H,W]
    Tensor<float> mask_px;    // [1,1,H,W]
    Tensor<float> mask_lat;   // [1,1,h,w]
    int cls = 0;
};

std::vector<LoadedScene> load_scenes(const Dataset& ds) {
    std::vector<LoadedScene> out(ds.entries.size());
    for (size_t i = 0; i < ds.entries.size(); ++i) {
        Image img = load_dataset_image(ds, i);
        PixelMask mask = load_dataset_mask(ds, i);
        out[i].image = stack_batch<float>({image_to_tensor(img)});
        out[i].mask_px = mask_to_tensor(mask);
        out[i].mask_lat = latent_mask_to_tensor(resize_to_latent(mask, 4));
        out[i].cls = ds.entries[i].cls;
    }
    return out;
}

template <class Pick>
Tensor<float> gather_batch(const std::vector<Tensor<float>>& pool,
                           const std::vector<int>& idx, Pick&&) = delete;

Tensor<float> concat_rows(const std::vector<const Tensor<float>*>& items) {
    Shape s = items[0]->shape();
    s[0] = (int)items.size();
    Tensor<float> out = Tensor<float>::zeros(s);
    int64_t n = items[0]->numel();
    for (size_t i = 0; i < items.size(); ++i)
        std::memcpy(out.data().data() + (int64_t)i * n, items[i]->data().data(),
                    sizeof(float) * n);
    return out;
}

// ---------------------------------------------------------------------------
// model <-> checkpoint plumbing
// ---------------------------------------------------------------------------

Checkpoint vae_checkpoint(const VaeModel<float>& model) {
    return checkpoint_from_params(model.params, nullptr,
                                  {{"kind", "vae"},
                                   {"c1", std::to_string(model.c1)},
                                   {"c2", std::to_string(model.c2)},
                                   {"latent_channels", std::to_string(model.latent_channels)},
                                   {"factor", "4"}});
}

VaeModel<float> vae_from_checkpoint(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    if (config_str(ck, "kind") != "vae")
        throw std::runtime_error("checkpoint " + path + " is a '" +
                                 config_str(ck, "kind") + "' model, expected 'vae'");
    auto model = VaeModel<float>::build(config_int(ck, "c1"), config_int(ck, "c2"),
                                        config_int(ck, "latent_channels"), 0);
    assign_params_from_checkpoint(model.params, ck);
    return model;
}

Checkpoint unet_checkpoint(const UNetModel<float>& model, const NoiseSchedule& ns) {
    return checkpoint_from_params(model.params, &ns,
                                  {{"kind", "denoiser"},
                                   {"w0", std::to_string(model.w0)},
                                   {"w1", std::to_string(model.w1)},
                                   {"w2", std::to_string(model.w2)},
                                   {"classes", std::to_string(model.classes)},
                                   {"in_channels", std::to_string(model.in_channels)},
                                   {"t_total", std::to_string(model.max_timestep)}});
}

std::pair<UNetModel<float>, NoiseSchedule> unet_from_checkpoint(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    if (config_str(ck, "kind") != "denoiser")
        throw std::runtime_error("checkpoint " + path + " is a '" +
                                 config_str(ck, "kind") + "' model, expected 'denoiser'");
    if (ck.schedule_betas.empty())
        throw std::runtime_error("checkpoint " + path + " carries no noise schedule");
    NoiseSchedule ns(ck.schedule_betas);
    auto model = UNetModel<float>::build(config_int(ck, "w0"), config_int(ck, "w1"),
                                         config_int(ck, "w2"), config_int(ck, "classes"), 0,
                                         config_int(ck, "in_channels") == 9,
                                         config_int(ck, "t_total"));
    assign_params_from_checkpoint(model.params, ck);
    return {std::move(model), std::move(ns)};
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonOpts& common, int count) {
    int threads = resolve_threads(common.threads);
    auto scenes = generate_scenes(count, common.seed, 0, threads);
    write_dataset(common.out_dir, scenes, count, common.seed);
    write_resolved_config(common.out_dir, {{"command", "gen-data"},
                                           {"count", std::to_string(count)},
                                           {"seed", std::to_string(common.seed)},
                                           {"threads", std::to_string(threads)},
                                           {"out_dir", common.out_dir}});
    emit_summary({{"command", "gen-data"},
                  {"count", count},
                  {"out_dir", common.out_dir}});
    return 0;
}

// ---------------------------------------------------------------------------
// train-vae
// ---------------------------------------------------------------------------

struct TrainVaeOpts {
    std::string data_dir;
    int steps = 2000;
    int batch = 8;
    double lr = 1e-3;
    double kl_weight = 1e-6;
    bool blend_objective = false;
    bool freeze_encoder = false;
    std::string init_from;
};

int cmd_train_vae(const CommonOpts& common, const TrainVaeOpts& o) {
    int threads = resolve_threads(common.threads);
    Dataset ds = read_manifest(o.data_dir);
    auto scenes = load_scenes(ds);
    if ((int)scenes.size() < o.batch)
        throw std::invalid_argument("train-vae: dataset has " +
                                    std::to_string(scenes.size()) +
                                    " scenes, batch needs " + std::to_string(o.batch));

    VaeModel<float> model = o.init_from.empty()
                                ? VaeModel<float>::build(32, 64, 4, common.seed)
                                : vae_from_checkpoint(o.init_from);
    // trainable view: everything, or decoder-only when the encoder is frozen
    ParameterSet<float> trainable;
    for (auto& [name, t] : model.params)
        if (!o.freeze_encoder || !model.is_encoder_param(name)) trainable.add(name, t);

    auto opt = AdamState<float>::init(trainable, (float)o.lr);
    VaeTrainConfig<float> cfg;
    cfg.kl_weight = (float)o.kl_weight;
    cfg.blend_objective = o.blend_objective;

    fs::create_directories(common.out_dir);
    std::ofstream log(common.out_dir + "/train_log.csv");
    log << "step,recon,kl,total\n";
    Rng rng(derive_seed(common.seed, "vae-train"));
    VaeStepReport last{};
    for (int step = 0; step < o.steps; ++step) {
        std::vector<const Tensor<float>*> xs, mps, mls;
        for (int b = 0; b < o.batch; ++b) {
            int idx = (int)rng.uniform_int(0, (int64_t)scenes.size() - 1);
            xs.push_back(&scenes[idx].image);
            mps.push_back(&scenes[idx].mask_px);
            mls.push_back(&scenes[idx].mask_lat);
        }
        Tensor<float> x = concat_rows(xs);
        Tensor<float> m_px = concat_rows(mps);
        Tensor<float> m_lat = concat_rows(mls);
        last = vae_train_step(model, trainable, opt, x,
                              o.blend_objective ? &m_px : nullptr,
                              o.blend_objective ? &m_lat : nullptr, cfg,
                              o.blend_objective ? nullptr : &rng);
        log << step << "," << last.recon << "," << last.kl << "," << last.total << "\n";
    }
    save_checkpoint(common.out_dir + "/vae.ckpt", vae_checkpoint(model));
    write_resolved_config(common.out_dir,
                          {{"command", "train-vae"},
                           {"data", o.data_dir},
                           {"steps", std::to_string(o.steps)},
                           {"batch", std::to_string(o.batch)},
                           {"lr", fmt_double(o.lr)},
                           {"kl_weight", fmt_double(o.kl_weight)},
                           {"blend_objective", o.blend_objective ? "1" : "0"},
                           {"freeze_encoder", o.freeze_encoder ? "1" : "0"},
                           {"init_from", o.init_from},
                           {"seed", std::to_string(common.seed)},
                           {"threads", std::to_string(threads)},
                           {"out_dir", common.out_dir}});
    emit_summary({{"command", "train-vae"},
                  {"checkpoint", common.out_dir + "/vae.ckpt"},
                  {"final_recon", last.recon},
                  {"final_total", last.total}});
    return 0;
}

// ---------------------------------------------------------------------------
// train-denoiser
// ---------------------------------------------------------------------------

struct TrainDenoiserOpts {
    std::string data_dir;
    std::string vae_path;
    std::string mode = "two-step";
    double lambda = 0.5;
    int steps = 5000;
    int batch = 4;
    double lr = 2e-4;
    double cond_dropout = 0.1;
    int t_total = 1000;
    bool mask_conditioning = false;
};

int cmd_train_denoiser(const CommonOpts& common, const TrainDenoiserOpts& o) {
    if (o.mode != "standard" && o.mode != "two-step")
        throw std::invalid_argument("train-denoiser: --mode must be standard or two-step, got '" +
                                    o.mode + "'");
    int threads = resolve_threads(common.threads);
    Dataset ds = read_manifest(o.data_dir);
    auto scenes = load_scenes(ds);
    VaeModel<float> vae = vae_from_checkpoint(o.vae_path);
    NoiseSchedule ns = NoiseSchedule::linear(o.t_total);

    // pre-encode every scene once (mean mode): z0 and the masked-image latent
    std::vector<Tensor<float>> z0s(scenes.size()), z0ms(scenes.size());
    const int enc_chunk = 16;
    for (size_t base = 0; base < scenes.size(); base += enc_chunk) {
        size_t n = std::min((size_t)enc_chunk, scenes.size() - base);
        std::vector<const Tensor<float>*> xs, mps;
        for (size_t i = 0; i < n; ++i) {
            xs.push_back(&scenes[base + i].image);
            mps.push_back(&scenes[base + i].mask_px);
        }
        Tensor<float> x = concat_rows(xs);
        Tensor<float> m_px = concat_rows(mps);
        Tensor<float> zeros = Tensor<float>::zeros(x.shape());
        Tensor<float> x_masked = masked_blend<float>(nullptr, zeros, x, m_px);
        Tensor<float> z0 = vae.encode(nullptr, x, false, nullptr);
        Tensor<float> z0m = vae.encode(nullptr, x_masked, false, nullptr);
        Shape one = z0.shape();
        one[0] = 1;
        int64_t stride = bldlab::numel(one);
        for (size_t i = 0; i < n; ++i) {
            z0s[base + i] = Tensor<float>::zeros(one);
            z0ms[base + i] = Tensor<float>::zeros(one);
            std::memcpy(z0s[base + i].data().data(), z0.data().data() + (int64_t)i * stride,
                        sizeof(float) * stride);
            std::memcpy(z0ms[base + i].data().data(),
                        z0m.data().data() + (int64_t)i * stride, sizeof(float) * stride);
        }
    }

    auto model = UNetModel<float>::build(64, 128, 128, kSceneClasses, common.seed,
                                         o.mask_conditioning, o.t_total);
    auto opt = AdamState<float>::init(model.params, (float)o.lr);
    TrainConfig cfg;
    cfg.mode = o.mode == "two-step" ? TrainMode::two_step : TrainMode::standard;
    cfg.lambda = o.lambda;
    cfg.lr = o.lr;
    cfg.batch = o.batch;
    cfg.steps = o.steps;
    cfg.cond_dropout = o.cond_dropout;
    cfg.seed = common.seed;

    fs::create_directories(common.out_dir);
    std::ofstream log(common.out_dir + "/train_log.csv");
    log << "step,t,l1,l2,combined\n";
    Rng rng(derive_seed(common.seed, "denoiser-train"));
    LossReport last;
    for (int step = 0; step < o.steps; ++step) {
        DenoiserBatch<float> batch;
        std::vector<const Tensor<float>*> z0p, z0mp, mlp;
        batch.classes.resize(o.batch);
        for (int b = 0; b < o.batch; ++b) {
            int idx = (int)rng.uniform_int(0, (int64_t)scenes.size() - 1);
            z0p.push_back(&z0s[idx]);
            z0mp.push_back(&z0ms[idx]);
            mlp.push_back(&scenes[idx].mask_lat);
            batch.classes[b] = scenes[idx].cls;
        }
        batch.z0 = concat_rows(z0p);
        batch.z0_masked = concat_rows(z0mp);
        batch.mask_latent = concat_rows(mlp);
        auto predict = unet_predictor<float>(model, &batch.mask_latent, &batch.z0_masked);
        last = train_step<float>(predict, model.params, opt, ns, batch, cfg, step,
                                 model.classes, rng);
        log << last.step << "," << last.t << "," << last.l1 << ","
            << (last.has_l2 ? fmt_double(last.l2) : "") << "," << last.combined << "\n";
    }
    save_checkpoint(common.out_dir + "/denoiser.ckpt", unet_checkpoint(model, ns));
    write_resolved_config(common.out_dir,
                          {{"command", "train-denoiser"},
                           {"data", o.data_dir},
                           {"vae", o.vae_path},
                           {"mode", o.mode},
                           {"lambda", fmt_double(o.lambda)},
                           {"steps", std::to_string(o.steps)},
                           {"batch", std::to_string(o.batch)},
                           {"lr", fmt_double(o.lr)},
                           {"cond_dropout", fmt_double(o.cond_dropout)},
                           {"t_total", std::to_string(o.t_total)},
                           {"mask_conditioning", o.mask_conditioning ? "1" : "0"},
                           {"seed", std::to_string(common.seed)},
                           {"threads", std::to_string(threads)},
                           {"out_dir", common.out_dir}});
    emit_summary({{"command", "train-denoiser"},
                  {"checkpoint", common.out_dir + "/denoiser.ckpt"},
                  {"mode", o.mode},
                  {"final_combined", last.combined}});
    return 0;
}

// ---------------------------------------------------------------------------
// inpaint / outpaint
// ---------------------------------------------------------------------------

struct InpaintOpts {
    std::string image_path;
    std::string mask_path;   // inpaint only
    double keep_ratio = 0.5; // outpaint only
    std::string vae_path;
    std::string denoiser_path;
    int cond_class = 0;
    int steps = 50;
    int stride = 20;
    double guidance = 3.0;
    bool paste = false;
    std::string name = "result";
};

nlohmann::json result_sidecar(const InpaintResult& result, const InpaintOpts& o,
                              uint64_t seed) {
    nlohmann::json j;
    j["cd"] = std::isnan(result.cd) ? nlohmann::json() : nlohmann::json(result.cd);
    j["cd_pasted"] =
        std::isnan(result.cd_pasted) ? nlohmann::json() : nlohmann::json(result.cd_pasted);
    j["preserved_max_dev"] = result.preserved_max_dev;
    j["seed"] = seed;
    j["steps"] = o.steps;
    j["guidance"] = o.guidance;
    j["checkpoints"] = {{"vae", o.vae_path}, {"denoiser", o.denoiser_path}};
    j["per_step_residual"] = result.per_step_residual;
    return j;
}

int cmd_inpaint(const CommonOpts& common, const InpaintOpts& o, bool outpaint_mode) {
    int threads = resolve_threads(common.threads);
    VaeModel<float> vae = vae_from_checkpoint(o.vae_path);
    auto [unet, ns] = unet_from_checkpoint(o.denoiser_path);

    InpaintRequest req;
    req.image = read_ppm(o.image_path);
    req.cond_class = o.cond_class;
    req.seed = common.seed;
    req.sampler.num_steps = o.steps;
    req.sampler.stride = o.stride;
    req.sampler.guidance_scale = o.guidance;
    req.paste_pixels = o.paste;

    InpaintResult result;
    if (outpaint_mode) {
        result = outpaint(vae, unet, ns, req.image, o.keep_ratio, req);
        req.mask = border_mask(req.image.height, req.image.width, o.keep_ratio);
    } else {
        req.mask = read_pgm(o.mask_path);
        result = bld_generate(vae, unet, ns, req);
    }

    fs::create_directories(common.out_dir);
    write_ppm(common.out_dir + "/" + o.name + ".ppm", result.output);
    write_pgm(common.out_dir + "/" + o.name + "_mask.pgm", req.mask);
    {
        std::ofstream side(common.out_dir + "/" + o.name + ".json");
        side << result_sidecar(result, o, common.seed).dump(2) << "\n";
    }
    ConfigEcho echo = {{"command", outpaint_mode ? "outpaint" : "inpaint"},
                       {"image", o.image_path},
                       {"class", std::to_string(o.cond_class)},
                       {"vae", o.vae_path},
                       {"denoiser", o.denoiser_path},
                       {"steps", std::to_string(o.steps)},
                       {"stride", std::to_string(o.stride)},
                       {"guidance", fmt_double(o.guidance)},
                       {"paste", o.paste ? "1" : "0"},
                       {"name", o.name},
                       {"seed", std::to_string(common.seed)},
                       {"threads", std::to_string(threads)},
                       {"out_dir", common.out_dir}};
    if (outpaint_mode)
        echo["keep_ratio"] = fmt_double(o.keep_ratio);
    else
        echo["mask"] = o.mask_path;
    write_resolved_config(common.out_dir, echo);

    nlohmann::json summary = {{"command", outpaint_mode ? "outpaint" : "inpaint"},
                              {"output", common.out_dir + "/" + o.name + ".ppm"},
                              {"preserved_max_dev", result.preserved_max_dev}};
    summary["cd"] = std::isnan(result.cd) ? nlohmann::json() : nlohmann::json(result.cd);
    emit_summary(summary);
    return 0;
}

// ---------------------------------------------------------------------------
// eval / report
// ---------------------------------------------------------------------------

int cmd_eval(const CommonOpts& common, const std::string& results,
             const std::string& masks, const std::string& refs) {
    auto report = evaluate_run(results, masks, refs);
    fs::create_directories(common.out_dir);
    write_eval_csv(report, common.out_dir + "/eval.csv");
    write_eval_json(report, common.out_dir + "/eval.json", results, masks, refs);
    write_resolved_config(common.out_dir, {{"command", "eval"},
                                           {"results", results},
                                           {"masks", masks},
                                           {"refs", refs},
                                           {"seed", std::to_string(common.seed)},
                                           {"out_dir", common.out_dir}});
    for (const auto& m : report.missing) std::cerr << "eval: " << m << "\n";
    emit_summary({{"command", "eval"},
                  {"count", report.rows.size()},
                  {"mean_cd", report.mean_cd},
                  {"mean_recon_mse", report.mean_recon_mse},
                  {"missing", report.missing.size()}});
    return 0;
}

int cmd_report(const CommonOpts& common, const std::string& eval_json_path) {
    std::ifstream in(eval_json_path);
    if (!in) throw std::invalid_argument("report: cannot open " + eval_json_path);
    nlohmann::json eval_json;
    in >> eval_json;
    std::string results = eval_json.at("results_dir").get<std::string>();
    std::string masks = eval_json.at("masks_dir").get<std::string>();
    std::string refs = eval_json.at("refs_dir").get<std::string>();
    auto rows = eval_json.at("rows");
    fs::create_directories(common.out_dir);
    if (rows.empty()) {
        std::cerr << "report: eval file lists no rows, nothing to render\n";
        emit_summary({{"command", "report"}, {"sheets", 0}});
        return 0;
    }
    std::vector<std::string> missing;
    std::ofstream csv(common.out_dir + "/sheets.csv");
    csv << "stem,sheet,cd\n";
    int sheets = 0;
    for (const auto& row : rows) {
        std::string stem = row.at("stem").get<std::string>();
        std::string in_path = refs + "/" + stem + ".ppm";
        std::string mask_path = masks + "/" + stem + ".pgm";
        std::string out_path = results + "/" + stem + ".ppm";
        if (!fs::exists(in_path) || !fs::exists(mask_path) || !fs::exists(out_path)) {
            missing.push_back(stem);
            continue;
        }
        Image input = read_ppm(in_path);
        PixelMask mask = read_pgm(mask_path);
        Image output = read_ppm(out_path);
        // input | mask | output side by side
        Image sheet = Image::filled(input.height, 3 * input.width, 0, 0, 0);
        for (int y = 0; y < input.height; ++y)
            for (int x = 0; x < input.width; ++x)
                for (int c = 0; c < 3; ++c) {
                    sheet.at(y, x, c) = input.at(y, x, c);
                    sheet.at(y, input.width + x, c) = mask.at(y, x) ? 255 : 0;
                    sheet.at(y, 2 * input.width + x, c) = output.at(y, x, c);
                }
        std::string sheet_path = common.out_dir + "/" + stem + "_sheet.ppm";
        write_ppm(sheet_path, sheet);
        csv << stem << "," << sheet_path << "," << row.at("cd").dump() << "\n";
        ++sheets;
    }
    write_resolved_config(common.out_dir, {{"command", "report"},
                                           {"eval", eval_json_path},
                                           {"out_dir", common.out_dir}});
    if (!missing.empty()) {
        for (const auto& m : missing) std::cerr << "report: missing artifacts for " << m << "\n";
        return 1;
    }
    emit_summary({{"command", "report"}, {"sheets", sheets}});
    return 0;
}

int cmd_verify(const CommonOpts& common) {
    (void)common;
    auto checks = run_verify_suites();
    bool all = true;
    for (const auto& c : checks) {
        std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << " (" << c.detail << ")\n";
        all = all && c.pass;
    }
    return all ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    blas_init();
    // BLAS stays single-threaded: the conv GEMMs here are small enough that
    // pool synchronization costs more than it buys. --threads feeds worker
    // pools (scene generation, batch evaluation) instead.
    blas_set_threads(1);
    CLI::App app{"blended-latent-diffusion laboratory"};
    app.require_subcommand(1);

    CommonOpts common;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic scene dataset");
    int gen_count = 64;
    add_common(gen, common);
    gen->add_option("--count", gen_count, "number of scenes");

    auto* tv = app.add_subcommand("train-vae", "train or fine-tune the VAE");
    TrainVaeOpts tvo;
    add_common(tv, common);
    tv->add_option("--data", tvo.data_dir, "dataset directory")->required();
    tv->add_option("--steps", tvo.steps, "optimization steps");
    tv->add_option("--batch", tvo.batch, "batch size");
    tv->add_option("--lr", tvo.lr, "learning rate");
    tv->add_option("--kl-weight", tvo.kl_weight, "weight of the KL term");
    tv->add_flag("--blend-objective", tvo.blend_objective,
                 "train against the blended reconstruction target");
    tv->add_flag("--freeze-encoder", tvo.freeze_encoder, "update decoder weights only");
    tv->add_option("--init-from", tvo.init_from, "checkpoint to start from");

    auto* td = app.add_subcommand("train-denoiser", "train the latent denoiser");
    TrainDenoiserOpts tdo;
    add_common(td, common);
    td->add_option("--data", tdo.data_dir, "dataset directory")->required();
    td->add_option("--vae", tdo.vae_path, "vae checkpoint")->required();
    td->add_option("--mode", tdo.mode, "standard | two-step");
    td->add_option("--lambda", tdo.lambda, "weight of the second-step loss");
    td->add_option("--steps", tdo.steps, "optimization steps");
    td->add_option("--batch", tdo.batch, "batch size");
    td->add_option("--lr", tdo.lr, "learning rate");
    td->add_option("--cond-dropout", tdo.cond_dropout,
                   "probability of dropping the class condition");
    td->add_option("--t-total", tdo.t_total, "diffusion steps T of the schedule");
    td->add_flag("--mask-conditioning", tdo.mask_conditioning,
                 "feed mask and masked latent as extra input channels");

    auto* ip = app.add_subcommand("inpaint", "fill the masked region of an image");
    InpaintOpts ipo;
    add_common(ip, common);
    ip->add_option("--image", ipo.image_path, "input PPM")->required();
    ip->add_option("--mask", ipo.mask_path, "mask PGM (255 = preserve)")->required();
    ip->add_option("--vae", ipo.vae_path, "vae checkpoint")->required();
    ip->add_option("--denoiser", ipo.denoiser_path, "denoiser checkpoint")->required();
    ip->add_option("--class", ipo.cond_class, "condition class id (-1 = none)");
    ip->add_option("--steps", ipo.steps, "sampling steps");
    ip->add_option("--stride", ipo.stride, "timestep stride");
    ip->add_option("--guidance", ipo.guidance, "classifier-free guidance scale");
    ip->add_flag("--paste", ipo.paste, "paste original pixels over the preserved region");
    ip->add_option("--name", ipo.name, "output artifact stem");

    auto* op = app.add_subcommand("outpaint", "generate beyond a centered crop");
    InpaintOpts opo;
    add_common(op, common);
    op->add_option("--image", opo.image_path, "input PPM")->required();
    op->add_option("--keep-ratio", opo.keep_ratio, "preserved center side ratio");
    op->add_option("--vae", opo.vae_path, "vae checkpoint")->required();
    op->add_option("--denoiser", opo.denoiser_path, "denoiser checkpoint")->required();
    op->add_option("--class", opo.cond_class, "condition class id (-1 = none)");
    op->add_option("--steps", opo.steps, "sampling steps");
    op->add_option("--stride", opo.stride, "timestep stride");
    op->add_option("--guidance", opo.guidance, "classifier-free guidance scale");
    op->add_flag("--paste", opo.paste, "paste original pixels over the preserved center");
    op->add_option("--name", opo.name, "output artifact stem");

    auto* ev = app.add_subcommand("eval", "score results against masks and references");
    std::string ev_results, ev_masks, ev_refs;
    add_common(ev, common);
    ev->add_option("--results", ev_results, "directory of generated PPMs")->required();
    ev->add_option("--masks", ev_masks, "directory of PGM masks")->required();
    ev->add_option("--refs", ev_refs, "directory of reference PPMs")->required();

    auto* rp = app.add_subcommand("report", "render contact sheets from an eval run");
    std::string rp_eval;
    add_common(rp, common);
    rp->add_option("--eval", rp_eval, "eval.json produced by the eval command")->required();

    auto* vf = app.add_subcommand("verify", "run the identity and gradient suites");
    add_common(vf, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);  // help -> 0, usage errors -> nonzero on stderr
    }

    try {
        if (gen->parsed()) return cmd_gen_data(common, gen_count);
        if (tv->parsed()) return cmd_train_vae(common, tvo);
        if (td->parsed()) return cmd_train_denoiser(common, tdo);
        if (ip->parsed()) return cmd_inpaint(common, ipo, false);
        if (op->parsed()) return cmd_inpaint(common, opo, true);
        if (ev->parsed()) return cmd_eval(common, ev_results, ev_masks, ev_refs);
        if (rp->parsed()) return cmd_report(common, rp_eval);
        if (vf->parsed()) return cmd_verify(common);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
