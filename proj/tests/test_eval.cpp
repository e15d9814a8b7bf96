#include "cmanet/eval.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

using namespace cmanet;
using sim::Vec3;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("cmanet_eval_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const {
        return (path / name).string();
    }
};

sim::Scene tiny_scene() {
    sim::Scene scene;
    scene.bs_list = {{Vec3(0, 0, 25), 0.0}, {Vec3(50, 0, 25), 0.0}};
    scene.array.rows = 1;
    scene.array.cols = 2;
    scene.n_subcarriers = 8;
    scene.path_count = 3;
    scene.ue_min = Vec3(0, 0, 0);
    scene.ue_max = Vec3(50, 50, 30);
    scene.seed = 33;
    return scene;
}

model::ModelConfig tiny_model() {
    model::ModelConfig config = model::ModelConfig::for_dataset(2, 2, 8);
    config.d_k = 8;
    config.lstm_hidden = 8;
    config.mlp_hidden = 8;
    return config;
}

}  // namespace

TEST_CASE("euclidean error: hand values") {
    CHECK(eval::euclidean_error({1, 2, 2}, {0, 0, 0}) == doctest::Approx(3.0));
    CHECK(eval::euclidean_error({4, 1, -1}, {1, 1, 3}) == doctest::Approx(5.0));
    CHECK(eval::euclidean_error({2, 2, 2}, {2, 2, 2}) == 0.0);
}

TEST_CASE("percentile: interpolated ranks, extremes, errors") {
    const std::vector<double> v = {1.0, 2.0, 3.0, 4.0};
    CHECK(eval::percentile(v, 50.0) == doctest::Approx(2.5));
    CHECK(eval::percentile(v, 0.0) == 1.0);
    CHECK(eval::percentile(v, 100.0) == 4.0);
    CHECK(eval::percentile(v, 25.0) == doctest::Approx(1.75));

    // Odd length: the median is the middle element exactly.
    CHECK(eval::percentile({5.0, 7.0, 11.0}, 50.0) == 7.0);
    CHECK(eval::percentile({42.0}, 90.0) == 42.0);

    CHECK_THROWS_AS(eval::percentile({}, 50.0), std::invalid_argument);
    CHECK_THROWS_AS(eval::percentile(v, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(eval::percentile(v, 101.0), std::invalid_argument);
}

TEST_CASE("error cdf is monotone from 1/n to 1 over sorted values") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 20.0);
    std::vector<double> errors(37);
    for (double& e : errors) e = u(rng);

    auto cdf = eval::error_cdf(errors);
    REQUIRE(cdf.size() == errors.size());
    CHECK(cdf.front().second == doctest::Approx(1.0 / 37.0));
    CHECK(cdf.back().second == 1.0);
    for (std::size_t i = 1; i < cdf.size(); ++i) {
        CHECK(cdf[i].first >= cdf[i - 1].first);
        CHECK(cdf[i].second > cdf[i - 1].second);
    }
    CHECK_THROWS_AS(eval::error_cdf({}), std::invalid_argument);
}

TEST_CASE("evaluate, accumulation curve and hotspot agree with direct sums") {
    TempDir dir;
    io::Dataset data = io::build_dataset(tiny_scene(), 30, dir.file("d.csid"));
    model::ModelConfig config = tiny_model();
    model::ModelParams params = model::ModelParams::init(config, 7);
    model::Normalizer normalizer = train::normalizer_from_meta(data.meta);

    eval::EvalReport report = eval::evaluate(data, params, config, normalizer);
    REQUIRE(report.errors_sorted.size() == 30);
    CHECK(std::is_sorted(report.errors_sorted.begin(), report.errors_sorted.end()));
    CHECK(report.median == eval::percentile(report.errors_sorted, 50.0));
    CHECK(report.p90 == eval::percentile(report.errors_sorted, 90.0));
    CHECK(report.variant == "cma");

    // The last curve point uses every subcarrier, i.e. the final estimate:
    // its mean must match the report's mean exactly (same batching).
    auto curve = eval::accumulation_curve(data, params, config, normalizer, 3);
    REQUIRE(!curve.empty());
    CHECK(curve.front().first == 3);
    CHECK(curve.back().first == config.num_subcarriers);
    CHECK(curve.back().second == doctest::Approx(report.mean).epsilon(1e-12));

    // A stride that overshoots N still records the final point.
    auto coarse = eval::accumulation_curve(data, params, config, normalizer, 100);
    REQUIRE(coarse.size() == 1);
    CHECK(coarse.front().first == config.num_subcarriers);

    // Hotspot: counts cover every sample, and the count-weighted mean over
    // the cells reproduces the overall mean error.
    eval::HotspotGrid grid = eval::hotspot_grid(data, params, config,
                                                normalizer, 10.0);
    CHECK(grid.nx == 5);
    CHECK(grid.ny == 5);
    int total = 0;
    double weighted = 0.0;
    for (std::size_t cell = 0; cell < grid.counts.size(); ++cell) {
        if (grid.counts[cell] == 0) {
            CHECK(std::isnan(grid.mean_error[cell]));
        } else {
            total += grid.counts[cell];
            weighted += grid.counts[cell] * grid.mean_error[cell];
        }
    }
    CHECK(total == 30);
    CHECK(weighted / 30.0 == doctest::Approx(report.mean).epsilon(1e-9));
}

TEST_CASE("single-sample hotspot occupies exactly one cell") {
    TempDir dir;
    io::Dataset data = io::build_dataset(tiny_scene(), 1, dir.file("d.csid"));
    model::ModelConfig config = tiny_model();
    model::ModelParams params = model::ModelParams::init(config, 8);
    model::Normalizer normalizer = train::normalizer_from_meta(data.meta);

    eval::HotspotGrid grid =
        eval::hotspot_grid(data, params, config, normalizer, 25.0);
    int occupied = 0;
    for (std::size_t cell = 0; cell < grid.counts.size(); ++cell) {
        if (grid.counts[cell] > 0) {
            ++occupied;
            CHECK(grid.counts[cell] == 1);
            CHECK(std::isfinite(grid.mean_error[cell]));
        } else {
            CHECK(std::isnan(grid.mean_error[cell]));
        }
    }
    CHECK(occupied == 1);
    CHECK_THROWS_AS(eval::hotspot_grid(data, params, config, normalizer, 0.0),
                    std::invalid_argument);
}

TEST_CASE("centroid baseline median") {
    TempDir dir;
    io::Dataset data = io::build_dataset(tiny_scene(), 21, dir.file("d.csid"));
    const Eigen::Vector3d centroid(25.0, 25.0, 15.0);
    std::vector<double> errors;
    for (const auto& record : data.records)
        errors.push_back((record.position - centroid).norm());
    std::sort(errors.begin(), errors.end());
    CHECK(eval::centroid_baseline_median(data) == errors[10]);
}

TEST_CASE("writers produce parseable artifacts") {
    TempDir dir;
    eval::write_cdf(dir.file("cdf.csv"), {{0.5, 0.5}, {1.5, 1.0}});
    eval::write_curve(dir.file("curve.csv"), {{12, 3.25}, {64, 1.5}});

    std::ifstream cdf(dir.file("cdf.csv"));
    std::string line;
    std::getline(cdf, line);
    CHECK(line == "error_m,cdf");
    std::getline(cdf, line);
    CHECK(line == "0.5,0.5");

    std::ifstream curve(dir.file("curve.csv"));
    std::getline(curve, line);
    CHECK(line == "subcarriers,mean_error_m");
    std::getline(curve, line);
    CHECK(line == "12,3.25");

    eval::HotspotGrid grid;
    grid.cell_size_m = 10.0;
    grid.nx = 2;
    grid.ny = 1;
    grid.mean_error = {2.0, std::numeric_limits<double>::quiet_NaN()};
    grid.counts = {3, 0};
    eval::write_hotspot(dir.file("grid.csv"), grid);
    std::ifstream hs(dir.file("grid.csv"));
    std::getline(hs, line);
    CHECK(line == "y_m\\x_m,5,15");
    std::getline(hs, line);
    CHECK(line == "5,2,nan");
}
