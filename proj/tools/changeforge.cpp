// changeforge: pervasive-change generation and anomalous change detection
// pipeline. Subcommands: ingest, train, translate, detect, evaluate,
// demo-synthetic. Exit codes: 0 success, 1 usage/config error, 2 data error,
// 3 numerical failure.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <changeforge/changeforge.hpp>
#include <json.hpp>

namespace fs = std::filesystem;
using namespace changeforge;

namespace {

double band_mean(const MultibandImage& img, int band) {
    const std::size_t plane = img.pixel_count();
    const float* p = img.data.data() + static_cast<std::size_t>(band) * plane;
    double acc = 0;
    for (std::size_t i = 0; i < plane; ++i) acc += p[i];
    return acc / static_cast<double>(plane);
}

// Header-only sanity check of one .bsq file: sidecar parses and the payload
// byte count matches, without reading the pixels.
void check_bsq_entry(const fs::path& bsq) {
    fs::path header = bsq;
    header.replace_extension(".json");
    std::ifstream hf(header);
    if (!hf) throw data_error("missing header " + header.string());
    nlohmann::json j;
    try {
        hf >> j;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("malformed header " + header.string() + ": " + e.what());
    }
    int bands = 0, height = 0, width = 0;
    try {
        bands = j.at("bands").get<int>();
        height = j.at("height").get<int>();
        width = j.at("width").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw data_error("invalid header fields in " + header.string() + ": " + e.what());
    }
    if (bands <= 0 || height <= 0 || width <= 0)
        throw data_error("non-positive dimensions in " + header.string());
    const auto expected = static_cast<std::uintmax_t>(bands) * height * width * sizeof(float);
    if (fs::file_size(bsq) != expected)
        throw data_error("payload size mismatch for " + bsq.string());
}

int cmd_ingest(const std::string& dir, const std::string& domain, const std::string& manifest,
               int reserve_flag) {
    if (!fs::is_directory(dir)) throw data_error("not a directory: " + dir);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".bsq")
            files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw data_error("no .bsq images found under " + dir);
    for (const auto& f : files) check_bsq_entry(f);

    TileDataset ds;
    ds.domain = domain;
    ds.images = files;
    const int n = static_cast<int>(files.size());
    int reserve = reserve_flag >= 0 ? reserve_flag : std::min(200, n / 10);
    if (reserve >= n) throw config_error("validation reserve must leave training images");
    ds.reserved_validation = reserve;
    save_dataset_manifest(ds, manifest);
    std::cout << "indexed " << n << " images (" << reserve << " reserved) -> " << manifest
              << "\n";
    return 0;
}

struct TrainOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs, decay_start, batch, patch, checkpoint_every;
    std::optional<double> lr, lambda;
    std::optional<std::string> mode;

    void apply(PipelineConfig& cfg) const {
        if (seed) {
            cfg.seed = *seed;
            cfg.train.seed = *seed;
        }
        if (epochs) cfg.train.epochs = *epochs;
        if (decay_start) cfg.train.decay_start_epoch = *decay_start;
        if (batch) cfg.train.batch_size = *batch;
        if (patch) cfg.train.patch_size = *patch;
        if (checkpoint_every) cfg.train.checkpoint_every = *checkpoint_every;
        if (lr) cfg.train.lr = *lr;
        if (lambda) cfg.train.lambda_cyc = *lambda;
        if (mode) cfg.train.mode = adversarial_mode_from_string(*mode);
    }
};

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const TrainOverrides& ov) {
    PipelineConfig cfg = load_pipeline_config(config_path);
    ov.apply(cfg);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    cfg.validate();
    if (cfg.dataset_x.empty() || cfg.dataset_y.empty())
        throw config_error("train requires dataset_x and dataset_y manifests in the config");
    const TileDataset ds_x = load_dataset_manifest(cfg.dataset_x);
    const TileDataset ds_y = load_dataset_manifest(cfg.dataset_y);
    TrainCallbacks cb;
    cb.on_epoch = [&](int epoch, double vc, double lr) {
        if ((epoch + 1) % 10 == 0 || epoch + 1 == cfg.train.epochs)
            std::cerr << "epoch " << (epoch + 1) << "/" << cfg.train.epochs
                      << " val_cycle=" << vc << " lr=" << lr << "\n";
    };
    const TrainResult res = train(ds_x, ds_y, cfg.train, cfg.out_dir, cb);
    save_pipeline_config(cfg, fs::path(cfg.out_dir) / "config.json");
    std::cout << "trained " << cfg.train.epochs << " epochs, "
              << res.history.size() << " steps; checkpoint: "
              << res.final_checkpoint.string() << "\n";
    return 0;
}

int cmd_translate(const std::string& ckpt, const std::string& in_path,
                  const std::string& out_path, bool reverse, int tile, int overlap) {
    const CycleGanModel model = load_model_checkpoint(ckpt);
    const MultibandImage img = load_image(in_path);
    const ParamStore<float>& store = reverse ? model.f : model.g;
    const std::string prefix = reverse ? "f" : "g";
    const MultibandImage out =
        translate(img, store, prefix, model.gen_arch, model.norm, tile, overlap);
    save_image(out, out_path);
    std::cout << "translated " << in_path << " -> " << out_path << (reverse ? " (F)" : " (G)")
              << "\n";
    return 0;
}

int cmd_detect(const std::string& before_path, const std::string& after_path,
               const std::string& out_path, int radius, double percentile, int stride,
               double shrinkage) {
    DetectorConfig dc;
    dc.radius = radius;
    dc.percentile = percentile;
    dc.sample_stride = stride;
    dc.shrinkage_scale = shrinkage;
    dc.validate();
    ImagePair pair;
    pair.before = load_image(before_path);
    pair.after = load_image(after_path);
    const GaussianChangeModel model = fit_gaussian(pair, dc.sample_stride, dc.shrinkage_scale);
    const AnomalyMap map = lcra_map(pair, model, dc.radius);
    save_anomaly_map(map, out_path);
    fs::path aux = out_path;
    aux.replace_extension(".pgm");
    save_anomaly_pgm(map, aux.string());
    const DetectionSet det = threshold_map(map, dc.percentile);
    aux.replace_extension(".csv");
    export_detections(det, map, aux.string());
    std::cout << "detections: " << det.size() << " of " << map.values.size() << " pixels above "
              << format_double(det.threshold) << " (p" << format_double(dc.percentile)
              << ") -> " << out_path << "\n";
    return 0;
}

std::vector<double> parse_percentiles(const std::string& csv) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= csv.size()) {
        const std::size_t next = csv.find(',', pos);
        const std::string tok =
            csv.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
        if (!tok.empty()) {
            try {
                out.push_back(std::stod(tok));
            } catch (const std::exception&) {
                throw config_error("bad percentile value: " + tok);
            }
        }
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    if (out.empty()) throw config_error("no percentiles given");
    return out;
}

int cmd_evaluate(const std::string& map1_path, const std::string& map2_path,
                 const std::string& out_path, const std::string& percentiles_csv,
                 bool absolute) {
    const std::vector<double> grid = percentiles_csv.empty()
                                         ? default_percentile_grid()
                                         : parse_percentiles(percentiles_csv);
    const AnomalyMap m1 = load_anomaly_map(map1_path);
    const AnomalyMap m2 = load_anomaly_map(map2_path);
    const RobustnessCurve curve = robustness_curve(m1, m2, grid, !absolute);
    export_curve(curve, out_path);
    std::cout << "robustness curve (" << curve.samples.size() << " samples) -> " << out_path
              << "\n";
    return 0;
}

std::optional<double> curve_ratio_at(const RobustnessCurve& curve, double percentile) {
    for (const auto& s : curve.samples)
        if (s.percentile == percentile) return s.ratio;
    return std::nullopt;
}

int cmd_demo(const std::string& out_dir, std::uint64_t seed, int tiles, int epochs,
             int batch) {
    const fs::path out(out_dir);
    fs::create_directories(out);

    std::cerr << "generating " << tiles << " synthetic tiles per domain\n";
    const auto [ds_x, ds_y] = write_synthetic_domains(out / "data", tiles, seed);

    TrainConfig tc;
    tc.epochs = epochs;
    tc.decay_start_epoch = epochs / 2;
    tc.seed = seed;
    tc.batch_size = batch;
    // the identity term keeps the generators pixel-anchored at desk scale,
    // which steadies the held-out cycle against adversarial drift
    tc.identity_weight = 0.5 * tc.lambda_cyc;
    tc.validate();
    TrainCallbacks cb;
    cb.on_epoch = [&](int epoch, double vc, double lr) {
        if ((epoch + 1) % 10 == 0 || epoch + 1 == epochs)
            std::cerr << "epoch " << (epoch + 1) << "/" << epochs << " val_cycle=" << vc
                      << " lr=" << lr << "\n";
    };
    const TrainResult res = train(ds_x, ds_y, tc, out / "train", cb);
    const CycleGanModel model = load_model_checkpoint(res.final_checkpoint);

    // how far the translated validation tiles moved along band 0
    fs::create_directories(out / "translated");
    double mean_x = 0, mean_t = 0, mean_y = 0;
    const auto val_x = ds_x.validation_paths();
    const auto val_y = ds_y.validation_paths();
    if (val_x.empty() || val_y.empty())
        throw data_error("demo requires a validation split in both domains");
    int ti = 0;
    for (const auto& p : val_x) {
        const MultibandImage img = load_image(p);
        const MultibandImage gen = translate(img, model.g, "g", model.gen_arch, model.norm);
        char name[32];
        std::snprintf(name, sizeof(name), "xhat_%03d.bsq", ti++);
        save_image(gen, (out / "translated" / name).string());
        mean_x += band_mean(img, 0);
        mean_t += band_mean(gen, 0);
    }
    for (const auto& p : val_y) mean_y += band_mean(load_image(p), 0);
    mean_x /= static_cast<double>(val_x.size());
    mean_t /= static_cast<double>(val_x.size());
    mean_y /= static_cast<double>(val_y.size());
    const double shift_fraction = (mean_t - mean_x) / (mean_y - mean_x);

    // anomaly experiment: one before/after pair with an injected 3x3 patch
    ImagePair pair = synthetic_eval_pair(seed);
    inject_anomaly(pair.after, 30, 30, 3);
    save_image(pair.before, (out / "eval_before.bsq").string());
    save_image(pair.after, (out / "eval_after.bsq").string());
    const MultibandImage y_hat =
        translate(pair.after, model.g, "g", model.gen_arch, model.norm);
    save_image(y_hat, (out / "eval_after_translated.bsq").string());

    DetectorConfig dc; // defaults: stride 1, radius 1, shrinkage 1e-6, p95
    const GaussianChangeModel gm1 = fit_gaussian(pair, dc.sample_stride, dc.shrinkage_scale);
    const AnomalyMap map1 = lcra_map(pair, gm1, dc.radius);
    ImagePair pair2;
    pair2.before = pair.before;
    pair2.after = y_hat;
    const GaussianChangeModel gm2 = fit_gaussian(pair2, dc.sample_stride, dc.shrinkage_scale);
    const AnomalyMap map2 = lcra_map(pair2, gm2, dc.radius);
    save_anomaly_map(map1, (out / "map_original.bsq").string());
    save_anomaly_pgm(map1, (out / "map_original.pgm").string());
    save_anomaly_map(map2, (out / "map_transformed.bsq").string());
    save_anomaly_pgm(map2, (out / "map_transformed.pgm").string());

    const auto grid = default_percentile_grid();
    RobustnessCurve curve = robustness_curve(map1, map2, grid);
    curve.original_name = "original";
    curve.transformed_name = "translated";
    export_curve(curve, (out / "curve.csv").string());
    const RobustnessCurve curve_id = robustness_curve(map1, map1, grid);
    export_curve(curve_id, (out / "curve_identity.csv").string());
    save_detection_diff_pgm(threshold_map(map1, dc.percentile),
                            threshold_map(map2, dc.percentile),
                            (out / "diff_p95.pgm").string());

    const auto ratio_p50 = curve_ratio_at(curve, 50.0);
    const auto ratio_p50_id = curve_ratio_at(curve_id, 50.0);
    const double val_first = res.val_cycle.front().second;
    const double val_last = res.val_cycle.back().second;

    nlohmann::ordered_json summary;
    summary["seed"] = seed;
    summary["tiles_per_domain"] = tiles;
    summary["epochs"] = epochs;
    summary["val_cycle_first"] = val_first;
    summary["val_cycle_last"] = val_last;
    summary["val_cycle_drop_fraction"] = 1.0 - val_last / val_first;
    summary["band0_mean_x"] = mean_x;
    summary["band0_mean_translated"] = mean_t;
    summary["band0_mean_y"] = mean_y;
    summary["band0_shift_fraction"] = shift_fraction;
    if (ratio_p50) summary["ratio_p50"] = *ratio_p50;
    if (ratio_p50_id) summary["ratio_p50_identity"] = *ratio_p50_id;
    summary["checkpoint"] = res.final_checkpoint.string();
    {
        std::ofstream sf(out / "summary.json");
        if (!sf) throw data_error("cannot write demo summary");
        sf << summary.dump(2) << "\n";
    }
    std::cout << "demo complete: cycle drop " << format_double(1.0 - val_last / val_first)
              << ", band-0 shift " << format_double(shift_fraction) << ", ratio@p50 "
              << (ratio_p50 ? format_double(*ratio_p50) : std::string("undefined")) << " -> "
              << (out / "summary.json").string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"pervasive-change generation and anomalous change detection pipeline"};
    app.require_subcommand(1);

    auto* ing = app.add_subcommand("ingest", "index .bsq images into a dataset manifest");
    std::string ing_dir, ing_domain, ing_manifest;
    int ing_reserve = -1;
    ing->add_option("dir", ing_dir, "directory holding .bsq images")->required();
    ing->add_option("--domain", ing_domain, "domain label (X or Y)")
        ->required()
        ->check(CLI::IsMember({"X", "Y"}));
    ing->add_option("--manifest", ing_manifest, "output manifest path")->required();
    ing->add_option("--reserve", ing_reserve,
                    "validation images to reserve (default: min(200, 10%))");

    auto* trn = app.add_subcommand("train", "run translation training");
    std::string trn_config, trn_out;
    TrainOverrides ov;
    trn->add_option("--config", trn_config, "pipeline config JSON")->required();
    trn->add_option("--out", trn_out, "output directory (overrides config)");
    std::uint64_t ov_seed = 0;
    int ov_epochs = 0, ov_decay = 0, ov_batch = 0, ov_patch = 0, ov_ckpt = 0;
    double ov_lr = 0, ov_lambda = 0;
    std::string ov_mode;
    auto* o_seed = trn->add_option("--seed", ov_seed, "master seed override");
    auto* o_epochs = trn->add_option("--epochs", ov_epochs, "epoch count override");
    auto* o_decay = trn->add_option("--decay-start", ov_decay, "decay start override");
    auto* o_batch = trn->add_option("--batch", ov_batch, "batch size override");
    auto* o_patch = trn->add_option("--patch", ov_patch, "patch size override");
    auto* o_ckpt = trn->add_option("--checkpoint-every", ov_ckpt, "checkpoint cadence");
    auto* o_lr = trn->add_option("--lr", ov_lr, "learning rate override");
    auto* o_lambda = trn->add_option("--lambda", ov_lambda, "cycle weight override");
    auto* o_mode = trn->add_option("--mode", ov_mode, "adversarial mode override")
                       ->check(CLI::IsMember({"least_squares", "cross_entropy"}));

    auto* tra = app.add_subcommand("translate", "apply a trained generator to an image");
    std::string tra_gen, tra_in, tra_out;
    bool tra_reverse = false;
    int tra_tile = 128, tra_overlap = 16;
    tra->add_option("--gen", tra_gen, "checkpoint file")->required();
    tra->add_option("--in", tra_in, "input .bsq image")->required();
    tra->add_option("--out", tra_out, "output .bsq image")->required();
    tra->add_flag("--reverse", tra_reverse, "apply F (Y->X) instead of G");
    tra->add_option("--tile", tra_tile, "tile size for large images");
    tra->add_option("--overlap", tra_overlap, "tile overlap in pixels");

    auto* det = app.add_subcommand("detect", "fit statistics and compute the anomaly map");
    std::string det_before, det_after, det_out;
    int det_radius = 1, det_stride = 1;
    double det_percentile = 95.0, det_shrinkage = 1e-6;
    det->add_option("--before", det_before, "before image (.bsq)")->required();
    det->add_option("--after", det_after, "after image (.bsq)")->required();
    det->add_option("--out", det_out, "output anomaly map (.bsq)")->required();
    det->add_option("--radius", det_radius, "co-registration search radius");
    det->add_option("--percentile", det_percentile, "detection threshold percentile");
    det->add_option("--stride", det_stride, "statistics sampling stride");
    det->add_option("--shrinkage", det_shrinkage, "covariance shrinkage scale");

    auto* eva = app.add_subcommand("evaluate", "robustness curve between two anomaly maps");
    std::string eva_m1, eva_m2, eva_out, eva_percentiles;
    bool eva_absolute = false;
    eva->add_option("--map1", eva_m1, "original anomaly map (.bsq)")->required();
    eva->add_option("--map2", eva_m2, "transformed anomaly map (.bsq)")->required();
    eva->add_option("--out", eva_out, "output curve CSV")->required();
    eva->add_option("--percentiles", eva_percentiles, "comma-separated grid (default 0,5,..,95)");
    eva->add_flag("--absolute", eva_absolute,
                  "threshold the transformed map at the original map's value");

    auto* dem = app.add_subcommand("demo-synthetic",
                                   "build the synthetic corpus and run the full pipeline");
    std::string dem_out;
    std::uint64_t dem_seed = 17;
    int dem_tiles = 200, dem_epochs = 200, dem_batch = 4;
    dem->add_option("--out", dem_out, "output directory")->required();
    dem->add_option("--seed", dem_seed, "master seed");
    dem->add_option("--tiles", dem_tiles, "tiles per domain");
    dem->add_option("--epochs", dem_epochs, "training epochs");
    dem->add_option("--batch", dem_batch, "training batch size");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*ing) return cmd_ingest(ing_dir, ing_domain, ing_manifest, ing_reserve);
        if (*trn) {
            if (*o_seed) ov.seed = ov_seed;
            if (*o_epochs) ov.epochs = ov_epochs;
            if (*o_decay) ov.decay_start = ov_decay;
            if (*o_batch) ov.batch = ov_batch;
            if (*o_patch) ov.patch = ov_patch;
            if (*o_ckpt) ov.checkpoint_every = ov_ckpt;
            if (*o_lr) ov.lr = ov_lr;
            if (*o_lambda) ov.lambda = ov_lambda;
            if (*o_mode) ov.mode = ov_mode;
            return cmd_train(trn_config, trn_out, ov);
        }
        if (*tra)
            return cmd_translate(tra_gen, tra_in, tra_out, tra_reverse, tra_tile, tra_overlap);
        if (*det)
            return cmd_detect(det_before, det_after, det_out, det_radius, det_percentile,
                              det_stride, det_shrinkage);
        if (*eva) return cmd_evaluate(eva_m1, eva_m2, eva_out, eva_percentiles, eva_absolute);
        if (*dem) return cmd_demo(dem_out, dem_seed, dem_tiles, dem_epochs, dem_batch);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const numeric_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
