// Acceptance suite: one test case per top-level criterion, each printing a
// single PASS/FAIL line. The desk-scale cases (4-6) share one generated
// dataset pair and the model trained in case 4.

#include "cmanet/config.hpp"
#include "cmanet/dataio.hpp"
#include "cmanet/eval.hpp"
#include "cmanet/model.hpp"
#include "cmanet/train.hpp"

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>

using namespace cmanet;
using sim::Vec3;
using nc::Matrix;
using nc::Tensor;

namespace {

void report(int criterion, const std::string& what, bool ok,
            const std::string& detail = "") {
    std::cout << "criterion " << criterion << " (" << what
              << "): " << (ok ? "PASS" : "FAIL");
    if (!detail.empty()) std::cout << "  [" << detail << "]";
    std::cout << std::endl;
    CHECK_MESSAGE(ok, "criterion ", criterion, ": ", what, " ", detail);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("cmanet_accept_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const {
        return (path / name).string();
    }
};

// Independent scalar oracle for the channel sum, with its own phase math.
sim::CsiTensor scalar_oracle(const sim::Scene& scene,
                             const std::vector<sim::PathSet>& paths_per_bs) {
    const int n_ant = scene.array.num_elements();
    sim::CsiTensor out(scene.num_bs(), n_ant, scene.n_subcarriers);
    for (int l = 0; l < scene.num_bs(); ++l) {
        const auto offsets = sim::element_offsets(
            scene.array, scene.wavelength_m(), scene.bs_list[l].yaw_rad);
        for (int m = 0; m < n_ant; ++m) {
            for (int k = 0; k < scene.n_subcarriers; ++k) {
                const double f = scene.carrier_hz +
                                 ((k + 1) - scene.n_subcarriers / 2.0) *
                                     scene.subcarrier_spacing_hz;
                std::complex<double> sum = 0.0;
                for (const auto& path : paths_per_bs[l]) {
                    const double phase =
                        -2.0 * std::numbers::pi *
                        (f * path.delay_s +
                         offsets[m].dot(path.direction) * f / sim::kSpeedOfLight);
                    sum += path.gain *
                           std::complex<double>(std::cos(phase), std::sin(phase));
                }
                out.at(l, m, k) = sum;
            }
        }
    }
    return out;
}

double rel_frobenius_error(const sim::CsiTensor& a, const sim::CsiTensor& b) {
    double diff = 0.0, ref = 0.0;
    for (size_t i = 0; i < a.data().size(); ++i) {
        diff += std::norm(a.data()[i] - b.data()[i]);
        ref += std::norm(b.data()[i]);
    }
    return std::sqrt(diff / ref);
}

// Scenes are kept small (tens of meters) so propagation phases stay below
// ~6e3 rad: cos/sin of a double-precision phase carries ~|phase|*eps relative
// rounding, and two independently ordered phase computations can only agree
// to 1e-12 when the phases themselves are that size.
sim::Scene random_small_scene(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> dl(1, 3), dm(1, 2), dn(2, 8), dp(1, 4);
    std::uniform_real_distribution<double> pos(-15.0, 15.0);
    sim::Scene scene;
    scene.bs_list.clear();
    const int n_bs = dl(rng);
    for (int l = 0; l < n_bs; ++l) {
        sim::BaseStation bs;
        bs.position = Vec3(pos(rng), pos(rng), 10.0 + l);
        bs.yaw_rad = pos(rng) / 50.0;
        scene.bs_list.push_back(bs);
    }
    scene.array.rows = dm(rng);
    scene.array.cols = dm(rng);
    scene.n_subcarriers = dn(rng);
    scene.path_count = dp(rng);
    scene.ue_min = Vec3(0, 0, 0);
    scene.ue_max = Vec3(5, 5, 5);
    scene.scatterer_margin_m = 2.0;
    return scene;
}

sim::Scene desk_scene(std::uint64_t seed) {
    sim::Scene scene;
    scene.bs_list = {{Vec3(0, 0, 25), 0.0},
                     {Vec3(200, 0, 25), 0.0},
                     {Vec3(0, 200, 25), 0.0},
                     {Vec3(200, 200, 25), 0.0}};
    scene.array.rows = 2;
    scene.array.cols = 2;
    scene.n_subcarriers = 64;
    scene.subcarrier_spacing_hz = 20e6 / 64.0;
    scene.path_count = 5;
    scene.ue_min = Vec3(0, 0, 0);
    scene.ue_max = Vec3(200, 200, 30);
    scene.seed = seed;
    return scene;
}

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = u(rng);
    return m;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    const size_t n = x.size();
    auto ranks = [n](const std::vector<double>& v) {
        std::vector<size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(),
                         [&](size_t a, size_t b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        for (size_t i = 0; i < n; ++i) r[idx[i]] = double(i);
        return r;
    };
    std::vector<double> rx = ranks(x), ry = ranks(y);
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / double(n);
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / double(n);
    double num = 0.0, dx = 0.0, dy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    return num / std::sqrt(dx * dy);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

// Desk-scale artifacts shared by cases 4-6.
struct DeskState {
    TempDir dir;
    io::Dataset train_data, test_data;
    model::ModelConfig config;
    model::ModelParams params;
    model::Normalizer normalizer;
    bool trained = false;
};
std::unique_ptr<DeskState> g_desk;

}  // namespace

TEST_CASE("criterion 1: gradient correctness at tiny scale") {
    const auto start = std::chrono::steady_clock::now();

    model::ModelConfig config;
    config.num_bs = 3;
    config.num_antennas = 2;
    config.num_subcarriers = 8;
    config.d_k = 8;
    config.lstm_hidden = 8;
    config.mlp_hidden = 8;
    model::ModelParams params = model::ModelParams::init(config, 11);

    std::mt19937_64 rng(12);
    std::vector<Matrix> batch = {
        random_matrix(config.num_bs, config.embed_dim(), rng)};
    Matrix target = random_matrix(1, 3, rng);

    std::vector<Tensor> leaves;
    for (const auto& [name, tensor] : params.named()) leaves.push_back(tensor);
    auto f = [&](const std::vector<Tensor>&) {
        return model::wmse_loss(model::forward_batch(batch, params, config),
                                target);
    };
    const double worst = nc::grad_check(f, leaves);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    report(1, "gradient correctness", worst < 1e-4 && seconds < 60.0,
           "max rel err " + fmt(worst) + ", " + fmt(seconds) + " s");
}

TEST_CASE("criterion 2: channel synthesis matches the scalar oracle") {
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        sim::Scene scene = random_small_scene(rng);
        std::mt19937_64 path_rng(trial);
        const Vec3 ue = sim::sample_ue(scene, path_rng);
        std::vector<sim::PathSet> paths;
        for (int l = 0; l < scene.num_bs(); ++l)
            paths.push_back(sim::generate_paths(scene, ue, l, path_rng));
        worst = std::max(worst, rel_frobenius_error(
                                    sim::synthesize_csi(scene, paths),
                                    scalar_oracle(scene, paths)));
    }

    // LOS-only: doubling the distance halves gain and doubles delay; phase
    // ratios cancel entry by entry, so every magnitude halves.
    sim::Scene scene = desk_scene(0);
    scene.path_count = 1;
    double worst_halving = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        std::mt19937_64 ue_rng(trial + 500);
        const Vec3 ue = sim::sample_ue(scene, ue_rng);
        std::vector<sim::PathSet> near, far;
        for (int l = 0; l < scene.num_bs(); ++l) {
            std::mt19937_64 draw(trial * 7 + l);
            sim::PathSet p = sim::generate_paths(scene, ue, l, draw);
            near.push_back(p);
            p[0].gain *= 0.5;
            p[0].delay_s *= 2.0;
            far.push_back(p);
        }
        auto h_near = sim::synthesize_csi(scene, near);
        auto h_far = sim::synthesize_csi(scene, far);
        for (size_t i = 0; i < h_near.data().size(); ++i) {
            const double ratio =
                std::abs(h_far.data()[i]) / std::abs(h_near.data()[i]);
            worst_halving = std::max(worst_halving, std::abs(ratio - 0.5));
        }
    }
    report(2, "channel oracle", worst < 1e-12 && worst_halving < 1e-12,
           "oracle rel err " + fmt(worst) + ", halving dev " +
               fmt(worst_halving));
}

TEST_CASE("criterion 3: algebraic invariants, 100+ instances each") {
    std::mt19937_64 rng(33);
    bool ok = true;
    std::string failure;

    // Index bijection and format round trip, exact.
    for (int trial = 0; trial < 100 && ok; ++trial) {
        std::uniform_int_distribution<int> dl(1, 4), dm(1, 3), dn(1, 8);
        const int l = dl(rng), m = dm(rng), n = dn(rng);
        sim::CsiTensor csi(l, m, n);
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        for (auto& z : csi.data()) z = {u(rng), u(rng)};
        Matrix h2 = model::space_domain_format(csi);
        sim::CsiTensor back = model::space_domain_inverse(h2, m);
        if (back.data() != csi.data()) {
            ok = false;
            failure = "format round trip";
            break;
        }
        auto h6 = model::reshape_for_decoder(nc::constant(h2), m, n);
        for (int a = 0; a < 2 * m && ok; ++a)
            for (int li = 0; li < l && ok; ++li)
                for (int ni = 0; ni < n; ++ni)
                    if (h6->value(ni, a * l + li) != h2(li, a * n + ni)) {
                        ok = false;
                        failure = "index bijection";
                        break;
                    }
    }

    // CMA mask scale invariance for c in {0.5, 3.0}.
    for (int trial = 0; trial < 100 && ok; ++trial) {
        Matrix h2 = random_matrix(4, 12, rng);
        Matrix base = model::cma_mask(nc::constant(h2))->value;
        for (double c : {0.5, 3.0}) {
            Matrix scaled = model::cma_mask(nc::constant((c * h2).eval()))->value;
            if ((scaled - base).cwiseAbs().maxCoeff() >= 1e-12) {
                ok = false;
                failure = "mask scale invariance";
            }
        }
    }

    // Encoder BS-permutation equivariance (exact up to reduction rounding).
    model::ModelConfig config;
    config.num_bs = 4;
    config.num_antennas = 2;
    config.num_subcarriers = 6;
    config.d_k = 8;
    model::ModelParams params = model::ModelParams::init(config, 44);
    for (int trial = 0; trial < 100 && ok; ++trial) {
        Matrix h2 = random_matrix(4, config.embed_dim(), rng);
        std::vector<int> perm = {0, 1, 2, 3};
        std::shuffle(perm.begin(), perm.end(), rng);
        Matrix permuted(4, h2.cols());
        for (int l = 0; l < 4; ++l) permuted.row(l) = h2.row(perm[l]);
        Matrix out = model::cma_forward(nc::constant(h2), params, config)->value;
        Matrix out_p =
            model::cma_forward(nc::constant(permuted), params, config)->value;
        for (int l = 0; l < 4; ++l)
            if ((out_p.row(l) - out.row(perm[l])).cwiseAbs().maxCoeff() >= 1e-13) {
                ok = false;
                failure = "permutation equivariance";
            }
    }

    // Decoder causality: step k's output is bit-identical when later step
    // inputs change.
    for (int trial = 0; trial < 100 && ok; ++trial) {
        std::vector<Tensor> steps, tampered;
        for (int n = 0; n < 6; ++n) {
            Matrix v = random_matrix(1, config.step_dim(), rng);
            steps.push_back(nc::constant(v));
            tampered.push_back(n < 3 ? nc::constant(v)
                                     : nc::constant(random_matrix(
                                           1, config.step_dim(), rng)));
        }
        auto a = model::decoder_forward(steps, params, config);
        auto b = model::decoder_forward(tampered, params, config);
        for (int n = 0; n < 3; ++n)
            if (a.step_outputs[n]->value != b.step_outputs[n]->value) {
                ok = false;
                failure = "decoder causality";
            }
    }

    report(3, "algebraic invariants", ok, ok ? "" : failure);
}

TEST_CASE("criterion 4: desk-scale learning beats the baselines by 5x") {
    g_desk = std::make_unique<DeskState>();
    DeskState& d = *g_desk;

    d.train_data = io::build_dataset(desk_scene(101), 8000,
                                     d.dir.file("train.csid"), 4);
    d.test_data = io::build_dataset(desk_scene(202), 2000,
                                    d.dir.file("test.csid"), 4);
    d.config = model::ModelConfig::for_dataset(4, 4, 64);

    train::FitOptions options;
    options.train.epochs = 12;
    options.train.val_every = 12;
    options.train.val_samples = 2000;
    options.train.seed = 5;
    options.model = d.config;
    options.out_dir = d.dir.file("fit");
    options.quiet = true;

    const auto start = std::chrono::steady_clock::now();
    train::fit(options, d.train_data, d.test_data, &d.params, &d.normalizer);
    const double minutes =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count() /
        60.0;
    d.trained = true;

    eval::EvalReport trained_report =
        eval::evaluate(d.test_data, d.params, d.config, d.normalizer);
    model::ModelParams untrained = model::ModelParams::init(d.config, 5);
    eval::EvalReport untrained_report =
        eval::evaluate(d.test_data, untrained, d.config, d.normalizer);
    const double centroid = eval::centroid_baseline_median(d.test_data);

    const bool ok = trained_report.median <= 0.2 * centroid &&
                    trained_report.median <= 0.2 * untrained_report.median &&
                    minutes <= 30.0;
    report(4, "desk-scale learning", ok,
           "median " + fmt(trained_report.median) + " m vs centroid " +
               fmt(centroid) + " m, untrained " + fmt(untrained_report.median) +
               " m, " + fmt(minutes) + " min");
}

TEST_CASE("criterion 5: error decreases as subcarriers accumulate") {
    REQUIRE_MESSAGE(bool(g_desk && g_desk->trained),
                    "needs the model trained in criterion 4");
    DeskState& d = *g_desk;

    auto curve = eval::accumulation_curve(d.test_data, d.params, d.config,
                                          d.normalizer, 12);
    REQUIRE(curve.size() >= 3);
    std::vector<double> ks, errs;
    for (const auto& [k, e] : curve) {
        ks.push_back(double(k));
        errs.push_back(e);
    }
    const double rho = spearman(ks, errs);
    const bool ok = curve.back().second <= 0.9 * curve.front().second && rho < 0.0;
    report(5, "frequency accumulation", ok,
           "first " + fmt(curve.front().second) + " m, final " +
               fmt(curve.back().second) + " m, spearman " + fmt(rho));
}

TEST_CASE("criterion 6: ablation pipeline, both variants beat the centroid") {
    REQUIRE_MESSAGE(bool(g_desk && g_desk->trained),
                    "needs the datasets generated in criterion 4");
    DeskState& d = *g_desk;

    train::FitOptions options;
    options.train.epochs = 8;
    options.train.val_every = 8;
    options.train.val_samples = 2000;
    options.train.seed = 5;
    options.model = d.config;
    options.out_dir = d.dir.file("ablate");
    options.quiet = true;

    eval::AblateResult result =
        eval::ablate(options, d.train_data, d.test_data, d.test_data);
    const double threshold = 0.2 * result.centroid_median_m;
    const bool ok =
        result.cma.median <= threshold && result.plain.median <= threshold;
    // The cma-vs-plain ordering is reported, not asserted.
    report(6, "ablation pipeline", ok,
           "cma " + fmt(result.cma.median) + " m, plain " +
               fmt(result.plain.median) + " m, delta " +
               fmt(result.median_delta_m) + " m, centroid " +
               fmt(result.centroid_median_m) + " m");
    g_desk.reset();
}

TEST_CASE("criterion 7: determinism and persistence") {
    TempDir dir;
    bool ok = true;
    std::string failure;

    sim::Scene scene = desk_scene(77);
    scene.n_subcarriers = 8;
    io::build_dataset(scene, 40, dir.file("a.csid"), 1);
    io::build_dataset(scene, 40, dir.file("b.csid"), 1);
    io::build_dataset(scene, 40, dir.file("c.csid"), 4);
    if (io::file_checksum(dir.file("a.csid")) !=
            io::file_checksum(dir.file("b.csid")) ||
        io::file_checksum(dir.file("a.csid")) !=
            io::file_checksum(dir.file("c.csid"))) {
        ok = false;
        failure = "dataset checksums differ";
    }

    io::Dataset data = io::read_dataset(dir.file("a.csid"));
    model::ModelConfig config = model::ModelConfig::for_dataset(4, 4, 8);
    config.lstm_hidden = 16;
    config.mlp_hidden = 16;

    train::FitOptions options;
    options.train.epochs = 2;
    options.train.val_every = 2;
    options.train.batch_size = 8;
    options.train.seed = 7;
    options.model = config;
    options.quiet = true;

    options.out_dir = dir.file("r1");
    model::ModelParams p1;
    model::Normalizer n1;
    train::FitSummary s1 = train::fit(options, data, data, &p1, &n1);
    options.out_dir = dir.file("r2");
    train::FitSummary s2 = train::fit(options, data, data);
    if (ok && slurp(s1.final_checkpoint) != slurp(s2.final_checkpoint)) {
        ok = false;
        failure = "training not bitwise reproducible";
    }

    train::LoadedCheckpoint loaded = train::load_checkpoint(s1.final_checkpoint);
    for (size_t i = 0; ok && i < data.records.size(); ++i) {
        Matrix h2 = train::record_h2(data.records[i], data.meta, n1);
        Matrix direct = model::forward_batch({h2}, p1, config).final->value;
        Matrix via = model::forward_batch({h2}, loaded.params, loaded.config)
                         .final->value;
        if (direct != via) {
            ok = false;
            failure = "checkpoint inference not bit-identical";
        }
    }
    report(7, "determinism and persistence", ok, ok ? "" : failure);
}

TEST_CASE("criterion 8: loss hand example") {
    model::ForwardResult result;
    Matrix step1(1, 3), step2(1, 3);
    step1 << 0, 0, 0;      // error 0, weight 1/2
    step2 << 3, 4, 0;      // error 5, weight 1
    result.step_outputs = {nc::constant(step1), nc::constant(step2)};
    result.final = result.step_outputs.back();
    const Matrix truth = Matrix::Zero(1, 3);
    const double loss = model::wmse_loss(result, truth)->value(0, 0);

    bool zero_iff = model::wmse_loss(
                        {{nc::constant(truth), nc::constant(truth)},
                         nc::constant(truth)},
                        truth)->value(0, 0) == 0.0;
    // Any nonzero estimate at any step must make the loss strictly positive.
    Matrix off = truth;
    off(0, 1) = 1e-9;
    zero_iff = zero_iff &&
               model::wmse_loss({{nc::constant(off), nc::constant(truth)},
                                 nc::constant(truth)},
                                truth)->value(0, 0) > 0.0;

    report(8, "loss hand example", loss == 5.0 && zero_iff,
           "loss " + fmt(loss));
}
