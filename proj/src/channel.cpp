#include "cmanet/channel.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace cmanet::sim {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool inside_box(const Vec3& p, const Vec3& lo, const Vec3& hi) {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
}

}  // namespace

void Scene::validate() const {
    if (bs_list.empty()) throw std::invalid_argument("scene: L >= 1 required");
    if (n_subcarriers < 2) throw std::invalid_argument("scene: N >= 2 required");
    if (path_count < 1) throw std::invalid_argument("scene: P >= 1 required");
    if (subcarrier_spacing_hz <= 0.0)
        throw std::invalid_argument("scene: delta_f must be positive");
    if (carrier_hz <= 0.0)
        throw std::invalid_argument("scene: carrier frequency must be positive");
    if (!((ue_max.array() > ue_min.array()).all()))
        throw std::invalid_argument("scene: degenerate UE volume");
    if (array.rows < 1 || array.cols < 1)
        throw std::invalid_argument("scene: array must have >= 1 element");
}

std::vector<double> subcarrier_frequencies(double carrier_hz,
                                           double spacing_hz, int n) {
    if (n < 2) throw std::invalid_argument("subcarrier_frequencies: N >= 2");
    std::vector<double> freqs(n);
    for (int k = 1; k <= n; ++k)
        freqs[k - 1] = carrier_hz + (k - n / 2.0) * spacing_hz;
    return freqs;
}

std::vector<Vec3> element_offsets(const ArraySpec& array, double wavelength_m,
                                  double yaw_rad) {
    const double pitch = array.spacing_wavelengths * wavelength_m;
    const double cy = std::cos(yaw_rad), sy = std::sin(yaw_rad);
    // Row axis is vertical, column axis horizontal and yaw-rotated; offsets
    // are centered on the array phase center.
    const Vec3 row_axis(0.0, 0.0, 1.0);
    const Vec3 col_axis(cy, sy, 0.0);
    std::vector<Vec3> offsets;
    offsets.reserve(array.num_elements());
    for (int r = 0; r < array.rows; ++r) {
        for (int c = 0; c < array.cols; ++c) {
            const double ro = (r - (array.rows - 1) / 2.0) * pitch;
            const double co = (c - (array.cols - 1) / 2.0) * pitch;
            offsets.push_back(ro * row_axis + co * col_axis);
        }
    }
    return offsets;
}

Eigen::VectorXcd steering_vector(const std::vector<Vec3>& offsets,
                                 const Vec3& direction, double wavelength_m) {
    if (std::abs(direction.norm() - 1.0) > 1e-9)
        throw std::invalid_argument("steering_vector: direction must be unit-norm");
    Eigen::VectorXcd v(static_cast<Eigen::Index>(offsets.size()));
    for (size_t m = 0; m < offsets.size(); ++m) {
        const double phase = -kTwoPi * offsets[m].dot(direction) / wavelength_m;
        v(static_cast<Eigen::Index>(m)) = std::polar(1.0, phase);
    }
    return v;
}

PathSet generate_paths(const Scene& scene, const Vec3& ue, int bs_index,
                       std::mt19937_64& rng) {
    if (!inside_box(ue, scene.ue_min, scene.ue_max))
        throw std::invalid_argument("generate_paths: UE outside the UE volume");
    if (bs_index < 0 || bs_index >= scene.num_bs())
        throw std::invalid_argument("generate_paths: bs_index out of range");

    const Vec3 bs = scene.bs_list[bs_index].position;
    const double lambda_c = scene.wavelength_m();

    PathSet paths;
    paths.reserve(scene.path_count);
    int scattered = scene.path_count;
    if (scene.los_enabled) {
        const double dist = (ue - bs).norm();
        Path los;
        los.gain = lambda_c / (4.0 * std::numbers::pi * dist);
        los.delay_s = dist / kSpeedOfLight;
        los.direction = (ue - bs) / dist;
        paths.push_back(los);
        scattered -= 1;
    }

    // Scatterer box: UE volume inflated horizontally, same height range.
    const Vec3 lo(scene.ue_min.x() - scene.scatterer_margin_m,
                  scene.ue_min.y() - scene.scatterer_margin_m, scene.ue_min.z());
    const Vec3 hi(scene.ue_max.x() + scene.scatterer_margin_m,
                  scene.ue_max.y() + scene.scatterer_margin_m, scene.ue_max.z());
    std::uniform_real_distribution<double> ux(lo.x(), hi.x());
    std::uniform_real_distribution<double> uy(lo.y(), hi.y());
    std::uniform_real_distribution<double> uz(lo.z(), hi.z());
    std::uniform_real_distribution<double> reflection(0.1, 0.6);

    for (int p = 0; p < scattered; ++p) {
        const double sx = ux(rng), sy = uy(rng), sz = uz(rng);
        const Vec3 s(sx, sy, sz);
        const double total = (ue - s).norm() + (s - bs).norm();
        Path path;
        path.gain = lambda_c / (4.0 * std::numbers::pi * total) * reflection(rng);
        path.delay_s = total / kSpeedOfLight;
        path.direction = (s - bs).normalized();
        paths.push_back(path);
    }
    return paths;
}

CsiTensor synthesize_csi(const Scene& scene,
                         const std::vector<PathSet>& paths_per_bs) {
    scene.validate();
    if (static_cast<int>(paths_per_bs.size()) != scene.num_bs())
        throw std::invalid_argument("synthesize_csi: one PathSet per BS required");

    const int n_bs = scene.num_bs();
    const int n_ant = scene.array.num_elements();
    const int n_sub = scene.n_subcarriers;
    const std::vector<double> freqs = subcarrier_frequencies(
        scene.carrier_hz, scene.subcarrier_spacing_hz, n_sub);

    CsiTensor csi(n_bs, n_ant, n_sub);
    for (int l = 0; l < n_bs; ++l) {
        const auto offsets = element_offsets(scene.array, scene.wavelength_m(),
                                             scene.bs_list[l].yaw_rad);
        for (int k = 0; k < n_sub; ++k) {
            const double f = freqs[k];
            const double lambda = kSpeedOfLight / f;   // per-subcarrier wavelength
            Eigen::VectorXcd response = Eigen::VectorXcd::Zero(n_ant);
            for (const Path& path : paths_per_bs[l]) {
                const Complex phase =
                    std::polar(path.gain, -kTwoPi * f * path.delay_s);
                response += phase * steering_vector(offsets, path.direction, lambda);
            }
            for (int m = 0; m < n_ant; ++m) csi.at(l, m, k) = response(m);
        }
    }
    return csi;
}

Vec3 sample_ue(const Scene& scene, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> ux(scene.ue_min.x(), scene.ue_max.x());
    std::uniform_real_distribution<double> uy(scene.ue_min.y(), scene.ue_max.y());
    std::uniform_real_distribution<double> uz(scene.ue_min.z(), scene.ue_max.z());
    const double x = ux(rng), y = uy(rng), z = uz(rng);
    return Vec3(x, y, z);
}

Sample generate_sample(const Scene& scene, std::uint64_t sample_seed) {
    std::mt19937_64 rng(sample_seed);
    Sample sample;
    sample.position = sample_ue(scene, rng);
    std::vector<PathSet> paths;
    paths.reserve(scene.num_bs());
    for (int l = 0; l < scene.num_bs(); ++l)
        paths.push_back(generate_paths(scene, sample.position, l, rng));
    sample.csi = synthesize_csi(scene, paths);
    return sample;
}

}  // namespace cmanet::sim
