// csipos: command-line front end for the CSI positioning pipeline.
//
//   gen-data   synthesize a dataset from a scene config
//   train      fit a model on a stored dataset
//   eval       error report (and optional CDF) for a checkpoint
//   curve      subcarrier-accumulation curve
//   hotspot    horizontal mean-error grid
//   ablate     paired cma/plain training + evaluation
//   gradcheck  finite-difference check of the full model gradient
//
// Exit codes: 0 success, 3 missing/corrupt file, 4 config contradiction,
// 5 gradcheck failure, 1 other runtime error; CLI11 codes for flag errors.

#include "cmanet/config.hpp"
#include "cmanet/dataio.hpp"
#include "cmanet/eval.hpp"
#include "cmanet/model.hpp"
#include "cmanet/train.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>

namespace {

using namespace cmanet;

constexpr int kExitFileError = 3;
constexpr int kExitContradiction = 4;
constexpr int kExitGradcheck = 5;

struct ContradictionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Looks next to the given path, then under $CSIPOS_CONFIG_DIR.
std::string resolve_config_path(const std::string& path) {
    namespace fs = std::filesystem;
    if (fs::exists(path)) return path;
    if (const char* dir = std::getenv("CSIPOS_CONFIG_DIR")) {
        fs::path alt = fs::path(dir) / path;
        if (fs::exists(alt)) return alt.string();
    }
    throw io::FormatError("config file not found: " + path);
}

void echo(const std::string& key, const std::string& value) {
    std::cout << "  " << key << " = " << value << "\n";
}
void echo(const std::string& key, double value) {
    std::cout << "  " << key << " = " << value << "\n";
}
void echo(const std::string& key, std::int64_t value) {
    std::cout << "  " << key << " = " << value << "\n";
}

void echo_scene(const sim::Scene& scene) {
    for (const auto& bs : scene.bs_list)
        echo("scene.bs", std::to_string(bs.position.x()) + " " +
                             std::to_string(bs.position.y()) + " " +
                             std::to_string(bs.position.z()) + " yaw " +
                             std::to_string(bs.yaw_rad));
    echo("scene.ue_min", std::to_string(scene.ue_min.x()) + " " +
                             std::to_string(scene.ue_min.y()) + " " +
                             std::to_string(scene.ue_min.z()));
    echo("scene.ue_max", std::to_string(scene.ue_max.x()) + " " +
                             std::to_string(scene.ue_max.y()) + " " +
                             std::to_string(scene.ue_max.z()));
    echo("array.rows", std::int64_t{scene.array.rows});
    echo("array.cols", std::int64_t{scene.array.cols});
    echo("array.spacing_wavelengths", scene.array.spacing_wavelengths);
    echo("ofdm.carrier_hz", scene.carrier_hz);
    echo("ofdm.spacing_hz", scene.subcarrier_spacing_hz);
    echo("ofdm.subcarriers", std::int64_t{scene.n_subcarriers});
    echo("paths.count", std::int64_t{scene.path_count});
    echo("paths.los", scene.los_enabled ? "true" : "false");
    echo("scene.seed", std::int64_t(scene.seed));
}

void echo_train(const train::TrainConfig& tc, const model::ModelConfig& mc) {
    echo("model.variant", model::to_string(mc.variant));
    echo("model.d_k", std::int64_t{mc.d_k});
    echo("model.lstm_hidden", std::int64_t{mc.lstm_hidden});
    echo("model.mlp_hidden", std::int64_t{mc.mlp_hidden});
    echo("train.epochs", std::int64_t{tc.epochs});
    echo("train.val_every", std::int64_t{tc.val_every});
    echo("train.val_samples", std::int64_t{tc.val_samples});
    echo("train.batch_size", std::int64_t{tc.batch_size});
    echo("train.learning_rate", tc.learning_rate);
    echo("train.clip_norm", tc.clip_norm);
    echo("train.seed", std::int64_t(tc.seed));
    echo("train.data_mode", tc.data_mode == train::DataMode::fixed_dataset
                                ? "fixed_dataset"
                                : "fresh_per_epoch");
    if (tc.data_mode == train::DataMode::fresh_per_epoch)
        echo("train.samples_per_epoch", std::int64_t{tc.samples_per_epoch});
}

io::Dataset load_dataset(const std::string& path) {
    if (!std::filesystem::exists(path))
        throw io::FormatError("dataset not found: " + path);
    return io::read_dataset(path);
}

void check_compatible(const io::DatasetMeta& meta,
                      const model::ModelConfig& config,
                      const std::string& what) {
    if (static_cast<int>(meta.num_bs) != config.num_bs ||
        static_cast<int>(meta.num_antennas) != config.num_antennas ||
        static_cast<int>(meta.num_subcarriers) != config.num_subcarriers)
        throw ContradictionError(
            "config contradiction: dataset" +
            (what.empty() ? "" : " " + what) + " has L/M/N = " +
            std::to_string(meta.num_bs) + "/" + std::to_string(meta.num_antennas) +
            "/" + std::to_string(meta.num_subcarriers) + " but the model expects " +
            std::to_string(config.num_bs) + "/" +
            std::to_string(config.num_antennas) + "/" +
            std::to_string(config.num_subcarriers));
}

void check_same_meta(const io::DatasetMeta& a, const io::DatasetMeta& b,
                     const std::string& what) {
    if (a.num_bs != b.num_bs || a.num_antennas != b.num_antennas ||
        a.num_subcarriers != b.num_subcarriers)
        throw ContradictionError("config contradiction: " + what +
                                 " has different dimensions from the training set");
}

train::LoadedCheckpoint load_model_for(const io::Dataset& data,
                                       const std::string& data_path,
                                       const std::string& checkpoint_path) {
    if (!std::filesystem::exists(checkpoint_path))
        throw io::FormatError("checkpoint not found: " + checkpoint_path);
    train::LoadedCheckpoint loaded = train::load_checkpoint(checkpoint_path);
    check_compatible(data.meta, loaded.config, data_path);
    return loaded;
}

int run(int argc, char** argv) {
    CLI::App app{"Multi-base-station CSI positioning pipeline"};
    app.require_subcommand(1);

    // ---- gen-data ----------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "Synthesize a CSI dataset");
    std::string gen_config, gen_out;
    std::int64_t gen_count = 1000;
    std::uint64_t gen_seed = 0;
    int gen_workers = 1;
    gen->add_option("--config", gen_config, "Scene config file")->required();
    gen->add_option("--out", gen_out, "Output dataset path")->required();
    gen->add_option("--count", gen_count, "Number of samples")
        ->capture_default_str();
    gen->add_option("--seed", gen_seed, "Override the scene seed");
    gen->add_option("--workers", gen_workers, "Parallel generation workers")
        ->capture_default_str();

    // ---- train -------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "Fit a model on a dataset");
    std::string tr_data, tr_val, tr_out, tr_config, tr_resume;
    std::string tr_variant = "cma";
    train::TrainConfig tr_tc;
    tr_tc.epochs = 60;
    tr_tc.val_every = 10;
    int tr_dk = 0, tr_lstm = 64, tr_mlp = 64;
    bool tr_fresh = false;
    tr->add_option("--data", tr_data, "Training dataset")->required();
    tr->add_option("--out", tr_out, "Output directory")->required();
    tr->add_option("--val-data", tr_val,
                   "Validation dataset (defaults to the training set)");
    tr->add_option("--config", tr_config, "Config file with [model]/[train] keys");
    tr->add_option("--resume", tr_resume, "Checkpoint to resume from");
    tr->add_option("--model-variant", tr_variant, "cma or plain")
        ->capture_default_str();
    tr->add_option("--epochs", tr_tc.epochs)->capture_default_str();
    tr->add_option("--val-every", tr_tc.val_every)->capture_default_str();
    tr->add_option("--val-samples", tr_tc.val_samples)->capture_default_str();
    tr->add_option("--batch", tr_tc.batch_size)->capture_default_str();
    tr->add_option("--lr", tr_tc.learning_rate)->capture_default_str();
    tr->add_option("--clip", tr_tc.clip_norm)->capture_default_str();
    tr->add_option("--seed", tr_tc.seed)->capture_default_str();
    tr->add_option("--d-k", tr_dk, "Attention width (default 2MN capped at 128)");
    tr->add_option("--lstm-hidden", tr_lstm)->capture_default_str();
    tr->add_option("--mlp-hidden", tr_mlp)->capture_default_str();
    tr->add_flag("--fresh", tr_fresh,
                 "Draw a fresh training set each epoch (needs --config)");
    tr->add_option("--samples-per-epoch", tr_tc.samples_per_epoch)
        ->capture_default_str();

    // ---- eval / curve / hotspot ---------------------------------------------
    auto* ev = app.add_subcommand("eval", "Error report for a checkpoint");
    std::string ev_data, ev_ckpt, ev_out, ev_cdf;
    ev->add_option("--data", ev_data, "Test dataset")->required();
    ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required();
    ev->add_option("--out", ev_out, "Report path")->required();
    ev->add_option("--cdf", ev_cdf, "Also write the error CDF here");

    auto* cv = app.add_subcommand("curve", "Subcarrier accumulation curve");
    std::string cv_data, cv_ckpt, cv_out;
    int cv_stride = 12;
    cv->add_option("--data", cv_data, "Test dataset")->required();
    cv->add_option("--checkpoint", cv_ckpt, "Model checkpoint")->required();
    cv->add_option("--out", cv_out, "Curve CSV path")->required();
    cv->add_option("--stride", cv_stride, "Subcarrier stride between points")
        ->capture_default_str();

    auto* hs = app.add_subcommand("hotspot", "Horizontal mean-error grid");
    std::string hs_data, hs_ckpt, hs_out;
    double hs_grid = 10.0;
    hs->add_option("--data", hs_data, "Test dataset")->required();
    hs->add_option("--checkpoint", hs_ckpt, "Model checkpoint")->required();
    hs->add_option("--out", hs_out, "Grid CSV path")->required();
    hs->add_option("--grid", hs_grid, "Cell size in meters")
        ->capture_default_str();

    // ---- ablate -------------------------------------------------------------
    auto* ab = app.add_subcommand("ablate", "Train and compare cma vs plain");
    std::string ab_train, ab_val, ab_test, ab_out;
    train::TrainConfig ab_tc;
    ab_tc.epochs = 60;
    ab_tc.val_every = 10;
    int ab_lstm = 64, ab_mlp = 64;
    ab->add_option("--train-data", ab_train)->required();
    ab->add_option("--test-data", ab_test)->required();
    ab->add_option("--out", ab_out, "Output directory")->required();
    ab->add_option("--val-data", ab_val,
                   "Validation dataset (defaults to the test set)");
    ab->add_option("--epochs", ab_tc.epochs)->capture_default_str();
    ab->add_option("--val-every", ab_tc.val_every)->capture_default_str();
    ab->add_option("--batch", ab_tc.batch_size)->capture_default_str();
    ab->add_option("--lr", ab_tc.learning_rate)->capture_default_str();
    ab->add_option("--seed", ab_tc.seed)->capture_default_str();
    ab->add_option("--lstm-hidden", ab_lstm)->capture_default_str();
    ab->add_option("--mlp-hidden", ab_mlp)->capture_default_str();

    // ---- gradcheck ----------------------------------------------------------
    auto* gc = app.add_subcommand("gradcheck",
                                  "Finite-difference check of the model gradient");
    bool gc_tiny = false;
    int gc_l = 3, gc_m = 2, gc_n = 8, gc_dk = 8, gc_hidden = 8;
    std::uint64_t gc_seed = 0;
    double gc_tol = 1e-4;
    gc->add_flag("--tiny", gc_tiny, "Use the reference tiny shape (default)");
    gc->add_option("--bs", gc_l, "Base stations L")->capture_default_str();
    gc->add_option("--antennas", gc_m, "Antennas M")->capture_default_str();
    gc->add_option("--subcarriers", gc_n, "Subcarriers N")->capture_default_str();
    gc->add_option("--d-k", gc_dk)->capture_default_str();
    gc->add_option("--hidden", gc_hidden)->capture_default_str();
    gc->add_option("--seed", gc_seed)->capture_default_str();
    gc->add_option("--tol", gc_tol, "Failure threshold")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        cfg::Config config = cfg::Config::parse_file(resolve_config_path(gen_config));
        sim::Scene scene = cfg::scene_from_config(config);
        if (gen->count("--seed")) scene.seed = gen_seed;
        std::cout << "resolved configuration:\n";
        echo_scene(scene);
        echo("gen.count", gen_count);
        echo("gen.workers", std::int64_t{gen_workers});
        echo("gen.out", gen_out);
        io::build_dataset(scene, static_cast<std::size_t>(gen_count), gen_out,
                          gen_workers);
        std::cout << "wrote " << gen_count << " samples to " << gen_out
                  << " (checksum " << io::file_checksum(gen_out) << ")\n";
        return 0;
    }

    if (tr->parsed()) {
        io::Dataset data = load_dataset(tr_data);
        io::Dataset val = tr_val.empty() ? data : load_dataset(tr_val);
        if (!tr_val.empty()) check_same_meta(data.meta, val.meta, tr_val);

        model::ModelConfig mc = model::ModelConfig::for_dataset(
            data.meta.num_bs, data.meta.num_antennas, data.meta.num_subcarriers);
        sim::Scene scene;
        if (!tr_config.empty()) {
            cfg::Config config =
                cfg::Config::parse_file(resolve_config_path(tr_config));
            if (!tr->count("--epochs"))
                tr_tc.epochs = int(config.get_int("train", "epochs", tr_tc.epochs));
            if (!tr->count("--val-every"))
                tr_tc.val_every =
                    int(config.get_int("train", "val_every", tr_tc.val_every));
            if (!tr->count("--batch"))
                tr_tc.batch_size =
                    int(config.get_int("train", "batch", tr_tc.batch_size));
            if (!tr->count("--lr"))
                tr_tc.learning_rate =
                    config.get_double("train", "lr", tr_tc.learning_rate);
            if (!tr->count("--clip"))
                tr_tc.clip_norm = config.get_double("train", "clip", tr_tc.clip_norm);
            if (!tr->count("--seed"))
                tr_tc.seed = std::uint64_t(config.get_int("train", "seed", 0));
            if (!tr->count("--model-variant"))
                tr_variant = config.get_string("model", "variant", tr_variant);
            if (!tr->count("--d-k"))
                tr_dk = int(config.get_int("model", "d_k", tr_dk));
            if (!tr->count("--lstm-hidden"))
                tr_lstm = int(config.get_int("model", "lstm_hidden", tr_lstm));
            if (!tr->count("--mlp-hidden"))
                tr_mlp = int(config.get_int("model", "mlp_hidden", tr_mlp));
            if (tr_fresh) scene = cfg::scene_from_config(config);
        } else if (tr_fresh) {
            throw ContradictionError(
                "config contradiction: --fresh needs --config for the scene");
        }
        mc.variant = model::variant_from_string(tr_variant);
        if (tr_dk > 0) mc.d_k = tr_dk;
        mc.lstm_hidden = tr_lstm;
        mc.mlp_hidden = tr_mlp;
        tr_tc.data_mode = tr_fresh ? train::DataMode::fresh_per_epoch
                                   : train::DataMode::fixed_dataset;

        std::cout << "resolved configuration:\n";
        echo_train(tr_tc, mc);
        echo("train.data", tr_data);
        echo("train.val_data", tr_val.empty() ? tr_data : tr_val);
        echo("train.out", tr_out);
        if (!tr_resume.empty()) echo("train.resume", tr_resume);

        train::FitOptions options;
        options.train = tr_tc;
        options.model = mc;
        options.out_dir = tr_out;
        options.resume_from = tr_resume;
        if (tr_fresh) options.scene = &scene;
        train::FitSummary summary = train::fit(options, data, val);
        std::cout << "finished " << summary.epochs_run << " epochs; final loss "
                  << summary.final_train_loss << ", val median "
                  << summary.final_val_median_m << " m, p90 "
                  << summary.final_val_p90_m << " m\ncheckpoint: "
                  << summary.final_checkpoint << "\n";
        return 0;
    }

    if (ev->parsed() || cv->parsed() || hs->parsed()) {
        const std::string data_path = ev->parsed() ? ev_data
                                      : cv->parsed() ? cv_data
                                                     : hs_data;
        const std::string ckpt_path = ev->parsed() ? ev_ckpt
                                      : cv->parsed() ? cv_ckpt
                                                     : hs_ckpt;
        io::Dataset data = load_dataset(data_path);
        train::LoadedCheckpoint loaded = load_model_for(data, data_path, ckpt_path);
        std::cout << "resolved configuration:\n";
        echo("eval.data", data_path);
        echo("eval.checkpoint", ckpt_path);
        echo("model.variant", model::to_string(loaded.config.variant));
        echo("model.epoch", std::int64_t{loaded.epoch});

        if (ev->parsed()) {
            eval::EvalReport report =
                eval::evaluate(data, loaded.params, loaded.config, loaded.normalizer);
            report.dataset_checksum = io::file_checksum(ev_data);
            report.checkpoint_id = ev_ckpt;
            eval::write_report(ev_out, report);
            if (!ev_cdf.empty())
                eval::write_cdf(ev_cdf, eval::error_cdf(report.errors_sorted));
            std::cout << "samples " << report.errors_sorted.size() << ", mean "
                      << report.mean << " m, median " << report.median
                      << " m, p90 " << report.p90 << " m\nreport: " << ev_out
                      << "\n";
        } else if (cv->parsed()) {
            echo("curve.stride", std::int64_t{cv_stride});
            auto curve = eval::accumulation_curve(data, loaded.params,
                                                  loaded.config,
                                                  loaded.normalizer, cv_stride);
            eval::write_curve(cv_out, curve);
            std::cout << "curve with " << curve.size() << " points: first mean "
                      << curve.front().second << " m, final mean "
                      << curve.back().second << " m\ncurve: " << cv_out << "\n";
        } else {
            echo("hotspot.grid_m", hs_grid);
            eval::HotspotGrid grid = eval::hotspot_grid(
                data, loaded.params, loaded.config, loaded.normalizer, hs_grid);
            eval::write_hotspot(hs_out, grid);
            std::cout << "grid " << grid.nx << " x " << grid.ny << " cells\n"
                      << "hotspot: " << hs_out << "\n";
        }
        return 0;
    }

    if (ab->parsed()) {
        io::Dataset train_data = load_dataset(ab_train);
        io::Dataset test_data = load_dataset(ab_test);
        io::Dataset val_data = ab_val.empty() ? test_data : load_dataset(ab_val);
        check_same_meta(train_data.meta, test_data.meta, ab_test);
        if (!ab_val.empty()) check_same_meta(train_data.meta, val_data.meta, ab_val);

        model::ModelConfig mc = model::ModelConfig::for_dataset(
            train_data.meta.num_bs, train_data.meta.num_antennas,
            train_data.meta.num_subcarriers);
        mc.lstm_hidden = ab_lstm;
        mc.mlp_hidden = ab_mlp;

        std::cout << "resolved configuration:\n";
        echo_train(ab_tc, mc);
        echo("ablate.train_data", ab_train);
        echo("ablate.test_data", ab_test);
        echo("ablate.out", ab_out);

        train::FitOptions options;
        options.train = ab_tc;
        options.model = mc;
        options.out_dir = ab_out;
        options.quiet = true;
        eval::AblateResult result =
            eval::ablate(options, train_data, val_data, test_data);
        result.cma.dataset_checksum = io::file_checksum(ab_test);
        result.plain.dataset_checksum = result.cma.dataset_checksum;
        eval::write_report(ab_out + "/cma_report.txt", result.cma);
        eval::write_report(ab_out + "/plain_report.txt", result.plain);
        std::cout << "cma   median " << result.cma.median << " m, p90 "
                  << result.cma.p90 << " m\n"
                  << "plain median " << result.plain.median << " m, p90 "
                  << result.plain.p90 << " m\n"
                  << "delta (plain - cma) " << result.median_delta_m << " m\n"
                  << "centroid baseline median " << result.centroid_median_m
                  << " m\n";
        return 0;
    }

    // gradcheck
    model::ModelConfig mc;
    mc.num_bs = gc_l;
    mc.num_antennas = gc_m;
    mc.num_subcarriers = gc_n;
    mc.d_k = gc_dk;
    mc.lstm_hidden = gc_hidden;
    mc.mlp_hidden = gc_hidden;
    std::cout << "resolved configuration:\n";
    echo("model.L", std::int64_t{mc.num_bs});
    echo("model.M", std::int64_t{mc.num_antennas});
    echo("model.N", std::int64_t{mc.num_subcarriers});
    echo("model.d_k", std::int64_t{mc.d_k});
    echo("model.hidden", std::int64_t{mc.lstm_hidden});
    echo("gradcheck.seed", std::int64_t(gc_seed));
    echo("gradcheck.tol", gc_tol);

    model::ModelParams params = model::ModelParams::init(mc, gc_seed);
    std::mt19937_64 rng(gc_seed + 1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::MatrixXd h2(mc.num_bs, mc.embed_dim());
    for (Eigen::Index i = 0; i < h2.rows(); ++i)
        for (Eigen::Index j = 0; j < h2.cols(); ++j) h2(i, j) = u(rng);
    Eigen::MatrixXd target(1, 3);
    target << u(rng), u(rng), u(rng);

    std::vector<nc::Tensor> leaves;
    for (const auto& [name, tensor] : params.named()) leaves.push_back(tensor);
    std::vector<Eigen::MatrixXd> batch = {h2};
    auto f = [&](const std::vector<nc::Tensor>&) {
        return model::wmse_loss(model::forward_batch(batch, params, mc), target);
    };
    const double worst = nc::grad_check(f, leaves);
    std::cout << "max relative error: " << worst << "\n";
    if (!(worst < gc_tol)) {
        std::cerr << "gradcheck FAILED: " << worst << " >= " << gc_tol << "\n";
        return kExitGradcheck;
    }
    std::cout << "gradcheck OK\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ContradictionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitContradiction;
    } catch (const io::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFileError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
