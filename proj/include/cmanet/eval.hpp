#pragma once

// Evaluation artifacts: error statistics and CDF, the subcarrier
// accumulation curve, the horizontal error hotspot grid, and the
// cma-vs-plain ablation driver.

#include "cmanet/dataio.hpp"
#include "cmanet/model.hpp"
#include "cmanet/train.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cmanet::eval {

struct EvalReport {
    std::vector<double> errors_sorted;   // meters, ascending
    double mean = 0.0;
    double median = 0.0;
    double p90 = 0.0;
    std::string variant;
    std::uint64_t dataset_checksum = 0;
    std::string checkpoint_id;
};

double euclidean_error(const Eigen::Vector3d& pred, const Eigen::Vector3d& truth);

/// Percentile by linear interpolation between closest order statistics
/// (inclusive convention): q in [0, 100]. Throws on empty input.
double percentile(const std::vector<double>& sorted_values, double q);

/// Empirical CDF points (value, fraction <= value) at each sorted error.
std::vector<std::pair<double, double>> error_cdf(std::vector<double> errors);

EvalReport evaluate(const io::Dataset& data, const model::ModelParams& params,
                    const model::ModelConfig& config,
                    const model::Normalizer& normalizer);

/// Mean error of the decoder's intermediate estimate at every `stride`-th
/// subcarrier (plus the final one), over the whole dataset. One inference
/// pass; the intermediate estimates come for free.
std::vector<std::pair<int, double>> accumulation_curve(
    const io::Dataset& data, const model::ModelParams& params,
    const model::ModelConfig& config, const model::Normalizer& normalizer,
    int stride = 12);

struct HotspotGrid {
    double cell_size_m = 0.0;
    double origin_x = 0.0, origin_y = 0.0;
    int nx = 0, ny = 0;
    std::vector<double> mean_error;   // row-major [iy * nx + ix], NaN if empty
    std::vector<int> counts;
};

HotspotGrid hotspot_grid(const io::Dataset& data,
                         const model::ModelParams& params,
                         const model::ModelConfig& config,
                         const model::Normalizer& normalizer,
                         double cell_size_m);

struct AblateResult {
    EvalReport cma;
    EvalReport plain;
    double median_delta_m = 0.0;   // plain - cma
    double centroid_median_m = 0.0;
};

/// Trains both variants with identical seeds, datasets and hyperparameters,
/// then evaluates them on the same test set.
AblateResult ablate(const train::FitOptions& base_options,
                    const io::Dataset& train_data, const io::Dataset& val_data,
                    const io::Dataset& test_data);

/// Median error of the constant predictor that always answers the
/// UE-volume centroid.
double centroid_baseline_median(const io::Dataset& data);

// Structured-text serialization (key: value lines, arrays comma-separated).
void write_report(const std::string& path, const EvalReport& report);
void write_cdf(const std::string& path, const std::vector<std::pair<double, double>>& cdf);
void write_curve(const std::string& path, const std::vector<std::pair<int, double>>& curve);
/// Comma-separated matrix with row/column coordinate headers; empty cells
/// are written as "nan".
void write_hotspot(const std::string& path, const HotspotGrid& grid);

}  // namespace cmanet::eval
