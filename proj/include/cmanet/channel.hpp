#pragma once

// Parametric multipath OFDM channel synthesis: per-BS path generation
// (LOS + single-bounce scatterers with Friis amplitudes), planar-array
// steering and the stacked L x M x N frequency response.

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <random>
#include <vector>

namespace cmanet::sim {

using Vec3 = Eigen::Vector3d;
using Complex = std::complex<double>;

constexpr double kSpeedOfLight = 299792458.0;

struct BaseStation {
    Vec3 position = Vec3::Zero();
    double yaw_rad = 0.0;   // array orientation: rotation about z
};

struct ArraySpec {
    int rows = 2;
    int cols = 4;
    double spacing_wavelengths = 0.5;   // element pitch in multiples of lambda_c

    int num_elements() const { return rows * cols; }
};

struct Scene {
    std::vector<BaseStation> bs_list;
    ArraySpec array;
    Vec3 ue_min = Vec3(0.0, 0.0, 0.0);
    Vec3 ue_max = Vec3(200.0, 200.0, 30.0);
    double carrier_hz = 3.5e9;
    double subcarrier_spacing_hz = 20e6 / 288.0;
    int n_subcarriers = 288;
    int path_count = 5;                 // P: one LOS + P-1 scattered
    bool los_enabled = true;
    double scatterer_margin_m = 50.0;   // horizontal inflation of the UE box
    std::uint64_t seed = 0;

    double wavelength_m() const { return kSpeedOfLight / carrier_hz; }
    int num_bs() const { return static_cast<int>(bs_list.size()); }

    /// Throws std::invalid_argument when any structural invariant is broken.
    void validate() const;
};

struct Path {
    double gain = 0.0;        // amplitude a_p, > 0
    double delay_s = 0.0;     // tau_p, > 0
    Vec3 direction = Vec3::UnitX();   // unit arrival direction at the BS array
};

using PathSet = std::vector<Path>;

/// Complex L x M x N channel tensor, row-major over (bs, antenna, subcarrier).
class CsiTensor {
public:
    CsiTensor() = default;
    CsiTensor(int l, int m, int n)
        : l_(l), m_(m), n_(n), data_(static_cast<size_t>(l) * m * n) {}

    int num_bs() const { return l_; }
    int num_antennas() const { return m_; }
    int num_subcarriers() const { return n_; }

    Complex& at(int l, int m, int n) { return data_[index(l, m, n)]; }
    const Complex& at(int l, int m, int n) const { return data_[index(l, m, n)]; }

    std::vector<Complex>& data() { return data_; }
    const std::vector<Complex>& data() const { return data_; }

private:
    size_t index(int l, int m, int n) const {
        return (static_cast<size_t>(l) * m_ + m) * n_ + n;
    }
    int l_ = 0, m_ = 0, n_ = 0;
    std::vector<Complex> data_;
};

/// f_k = f_c + (k - N/2) * delta_f for the 1-based subcarrier index k = 1..N.
std::vector<double> subcarrier_frequencies(double carrier_hz,
                                           double spacing_hz, int n);

/// Element offsets (meters, global frame, centered on the array phase
/// center) of a rows x cols planar array at the given base station.
std::vector<Vec3> element_offsets(const ArraySpec& array, double wavelength_m,
                                  double yaw_rad);

/// Per-element phase signature exp(-j 2 pi <offset_m, direction> / lambda).
/// Throws if direction is not unit-norm.
Eigen::VectorXcd steering_vector(const std::vector<Vec3>& offsets,
                                 const Vec3& direction, double wavelength_m);

/// LOS plus P-1 single-bounce paths for one BS. Throws if ue lies outside
/// the scene's UE volume.
PathSet generate_paths(const Scene& scene, const Vec3& ue, int bs_index,
                       std::mt19937_64& rng);

/// H[l, m, k] = sum_p a_p exp(-j 2 pi f_k tau_p) steer(offsets_l, dir_p, c/f_k).
CsiTensor synthesize_csi(const Scene& scene,
                         const std::vector<PathSet>& paths_per_bs);

/// Uniform draw over the UE volume.
Vec3 sample_ue(const Scene& scene, std::mt19937_64& rng);

struct Sample {
    Vec3 position;
    CsiTensor csi;
};

/// One full draw: UE position, per-BS paths, synthesized CSI. The RNG for
/// sample i of a dataset is seeded with scene.seed ^ i so generation
/// parallelizes deterministically.
Sample generate_sample(const Scene& scene, std::uint64_t sample_seed);

}  // namespace cmanet::sim
