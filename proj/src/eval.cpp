#include "cmanet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cmanet::eval {

double euclidean_error(const Eigen::Vector3d& pred,
                       const Eigen::Vector3d& truth) {
    return (pred - truth).norm();
}

double percentile(const std::vector<double>& sorted_values, double q) {
    if (sorted_values.empty())
        throw std::invalid_argument("percentile: empty input");
    if (q < 0.0 || q > 100.0)
        throw std::invalid_argument("percentile: q must be in [0, 100]");
    const double rank = q / 100.0 * (static_cast<double>(sorted_values.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = static_cast<std::size_t>(std::ceil(rank));
    const double frac = rank - static_cast<double>(lo);
    return sorted_values[lo] * (1.0 - frac) + sorted_values[hi] * frac;
}

std::vector<std::pair<double, double>> error_cdf(std::vector<double> errors) {
    if (errors.empty()) throw std::invalid_argument("error_cdf: empty input");
    std::sort(errors.begin(), errors.end());
    std::vector<std::pair<double, double>> cdf;
    cdf.reserve(errors.size());
    const double n = static_cast<double>(errors.size());
    for (std::size_t i = 0; i < errors.size(); ++i)
        cdf.emplace_back(errors[i], static_cast<double>(i + 1) / n);
    return cdf;
}

EvalReport evaluate(const io::Dataset& data, const model::ModelParams& params,
                    const model::ModelConfig& config,
                    const model::Normalizer& normalizer) {
    EvalReport report;
    report.errors_sorted = train::position_errors(
        data, 0, data.records.size(), params, config, normalizer);
    std::sort(report.errors_sorted.begin(), report.errors_sorted.end());
    report.mean = std::accumulate(report.errors_sorted.begin(),
                                  report.errors_sorted.end(), 0.0) /
                  static_cast<double>(report.errors_sorted.size());
    report.median = percentile(report.errors_sorted, 50.0);
    report.p90 = percentile(report.errors_sorted, 90.0);
    report.variant = model::to_string(config.variant);
    return report;
}

std::vector<std::pair<int, double>> accumulation_curve(
    const io::Dataset& data, const model::ModelParams& params,
    const model::ModelConfig& config, const model::Normalizer& normalizer,
    int stride) {
    const int n_sub = config.num_subcarriers;
    if (stride < 1) throw std::invalid_argument("accumulation_curve: stride >= 1");

    // Recorded subcarrier counts: stride, 2*stride, ..., plus N itself.
    std::vector<int> marks;
    for (int k = stride; k <= n_sub; k += stride) marks.push_back(k);
    if (marks.empty() || marks.back() != n_sub) marks.push_back(n_sub);

    std::vector<double> sums(marks.size(), 0.0);
    const int batch_size = 64;
    std::size_t done = 0;
    while (done < data.records.size()) {
        const std::size_t stop = std::min(
            done + static_cast<std::size_t>(batch_size), data.records.size());
        std::vector<Eigen::MatrixXd> h2;
        h2.reserve(stop - done);
        for (std::size_t i = done; i < stop; ++i)
            h2.push_back(train::record_h2(data.records[i], data.meta, normalizer));
        model::ForwardResult result =
            model::forward_batch(h2, params, config);
        for (std::size_t mi = 0; mi < marks.size(); ++mi) {
            const auto& step = result.step_outputs[marks[mi] - 1]->value;
            for (Eigen::Index b = 0; b < step.rows(); ++b) {
                const Eigen::Vector3d pred =
                    normalizer.unit_to_meters(step.row(b).transpose());
                sums[mi] += euclidean_error(
                    pred, data.records[done + static_cast<std::size_t>(b)].position);
            }
        }
        done = stop;
    }

    std::vector<std::pair<int, double>> curve;
    curve.reserve(marks.size());
    for (std::size_t mi = 0; mi < marks.size(); ++mi)
        curve.emplace_back(marks[mi],
                           sums[mi] / static_cast<double>(data.records.size()));
    return curve;
}

HotspotGrid hotspot_grid(const io::Dataset& data,
                         const model::ModelParams& params,
                         const model::ModelConfig& config,
                         const model::Normalizer& normalizer,
                         double cell_size_m) {
    if (cell_size_m <= 0.0)
        throw std::invalid_argument("hotspot_grid: cell size must be positive");
    HotspotGrid grid;
    grid.cell_size_m = cell_size_m;
    grid.origin_x = data.meta.ue_min.x();
    grid.origin_y = data.meta.ue_min.y();
    const double span_x = data.meta.ue_max.x() - data.meta.ue_min.x();
    const double span_y = data.meta.ue_max.y() - data.meta.ue_min.y();
    grid.nx = std::max(1, static_cast<int>(std::ceil(span_x / cell_size_m)));
    grid.ny = std::max(1, static_cast<int>(std::ceil(span_y / cell_size_m)));
    grid.mean_error.assign(static_cast<std::size_t>(grid.nx) * grid.ny, 0.0);
    grid.counts.assign(static_cast<std::size_t>(grid.nx) * grid.ny, 0);

    const std::vector<double> errors = train::position_errors(
        data, 0, data.records.size(), params, config, normalizer);
    for (std::size_t i = 0; i < errors.size(); ++i) {
        const auto& pos = data.records[i].position;
        int ix = static_cast<int>((pos.x() - grid.origin_x) / cell_size_m);
        int iy = static_cast<int>((pos.y() - grid.origin_y) / cell_size_m);
        ix = std::clamp(ix, 0, grid.nx - 1);
        iy = std::clamp(iy, 0, grid.ny - 1);
        const std::size_t cell = static_cast<std::size_t>(iy) * grid.nx + ix;
        grid.mean_error[cell] += errors[i];
        grid.counts[cell] += 1;
    }
    for (std::size_t cell = 0; cell < grid.mean_error.size(); ++cell) {
        if (grid.counts[cell] > 0)
            grid.mean_error[cell] /= grid.counts[cell];
        else
            grid.mean_error[cell] = std::numeric_limits<double>::quiet_NaN();
    }
    return grid;
}

double centroid_baseline_median(const io::Dataset& data) {
    const Eigen::Vector3d centroid =
        0.5 * (data.meta.ue_min + data.meta.ue_max);
    std::vector<double> errors;
    errors.reserve(data.records.size());
    for (const auto& record : data.records)
        errors.push_back(euclidean_error(centroid, record.position));
    std::sort(errors.begin(), errors.end());
    return percentile(errors, 50.0);
}

AblateResult ablate(const train::FitOptions& base_options,
                    const io::Dataset& train_data, const io::Dataset& val_data,
                    const io::Dataset& test_data) {
    AblateResult result;
    for (model::Variant variant : {model::Variant::cma, model::Variant::plain}) {
        train::FitOptions options = base_options;
        options.model.variant = variant;
        options.out_dir =
            base_options.out_dir + "/" + model::to_string(variant);
        model::ModelParams params;
        model::Normalizer normalizer;
        train::FitSummary summary =
            train::fit(options, train_data, val_data, &params, &normalizer);
        EvalReport report = evaluate(test_data, params, options.model, normalizer);
        report.checkpoint_id = summary.final_checkpoint;
        if (variant == model::Variant::cma)
            result.cma = std::move(report);
        else
            result.plain = std::move(report);
    }
    result.median_delta_m = result.plain.median - result.cma.median;
    result.centroid_median_m = centroid_baseline_median(test_data);
    return result;
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.precision(10);
    return out;
}

}  // namespace

void write_report(const std::string& path, const EvalReport& report) {
    auto out = open_out(path);
    out << "report:\n";
    out << "  variant: " << report.variant << "\n";
    out << "  samples: " << report.errors_sorted.size() << "\n";
    out << "  mean_m: " << report.mean << "\n";
    out << "  median_m: " << report.median << "\n";
    out << "  p90_m: " << report.p90 << "\n";
    out << "  percentile_convention: linear interpolation between closest ranks\n";
    out << "  dataset_checksum: " << report.dataset_checksum << "\n";
    out << "  checkpoint: " << report.checkpoint_id << "\n";
    out << "  errors_m: [";
    for (std::size_t i = 0; i < report.errors_sorted.size(); ++i)
        out << (i ? "," : "") << report.errors_sorted[i];
    out << "]\n";
}

void write_cdf(const std::string& path,
               const std::vector<std::pair<double, double>>& cdf) {
    auto out = open_out(path);
    out << "error_m,cdf\n";
    for (const auto& [value, fraction] : cdf)
        out << value << "," << fraction << "\n";
}

void write_curve(const std::string& path,
                 const std::vector<std::pair<int, double>>& curve) {
    auto out = open_out(path);
    out << "subcarriers,mean_error_m\n";
    for (const auto& [k, error] : curve) out << k << "," << error << "\n";
}

void write_hotspot(const std::string& path, const HotspotGrid& grid) {
    auto out = open_out(path);
    out << "y_m\\x_m";
    for (int ix = 0; ix < grid.nx; ++ix)
        out << "," << grid.origin_x + (ix + 0.5) * grid.cell_size_m;
    out << "\n";
    for (int iy = 0; iy < grid.ny; ++iy) {
        out << grid.origin_y + (iy + 0.5) * grid.cell_size_m;
        for (int ix = 0; ix < grid.nx; ++ix) {
            const double value =
                grid.mean_error[static_cast<std::size_t>(iy) * grid.nx + ix];
            out << ",";
            if (std::isnan(value))
                out << "nan";
            else
                out << value;
        }
        out << "\n";
    }
}

}  // namespace cmanet::eval
