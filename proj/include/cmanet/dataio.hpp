#pragma once

// Bit-exact binary persistence: "CSID" dataset files (CSI stored at 32-bit
// precision) and "CKPT" checkpoint files (64-bit parameter blobs with a
// named manifest). All fields little-endian.

#include "cmanet/channel.hpp"

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cmanet::io {

/// Structural problem with a file: bad magic, wrong version, truncation,
/// shape/byte-length contradiction.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DatasetMeta {
    std::uint32_t num_bs = 0;          // L
    std::uint32_t num_antennas = 0;    // M
    std::uint32_t num_subcarriers = 0; // N
    double carrier_hz = 0.0;
    double spacing_hz = 0.0;
    Eigen::Vector3d ue_min = Eigen::Vector3d::Zero();
    Eigen::Vector3d ue_max = Eigen::Vector3d::Zero();
    std::vector<Eigen::Vector3d> bs_positions;
    double norm_scale = 1.0;   // dataset-level RMS of the real/imag scalars
    std::uint64_t seed = 0;

    std::size_t csi_scalars() const {
        return std::size_t{2} * num_bs * num_antennas * num_subcarriers;
    }
};

/// One stored record: true position (meters) and the quantized CSI,
/// row-major over (bs, antenna, subcarrier).
struct DatasetRecord {
    Eigen::Vector3d position;
    std::vector<std::complex<float>> csi;
};

struct Dataset {
    DatasetMeta meta;
    std::vector<DatasetRecord> records;

    std::size_t size() const { return records.size(); }
};

/// Quantizes a simulated sample to the storage precision.
DatasetRecord to_record(const sim::Sample& sample);

/// RMS of all real/imag scalars across records, accumulated in record order.
double compute_norm_scale(const std::vector<DatasetRecord>& records);

void write_dataset(const std::string& path, const Dataset& dataset);
Dataset read_dataset(const std::string& path);

/// Generates `count` samples (per-sample seed = scene.seed ^ index, so the
/// result is independent of the worker count) and writes them with the
/// computed normalization scale.
Dataset build_dataset(const sim::Scene& scene, std::size_t count,
                      const std::string& path, int workers = 1);

struct Checkpoint {
    std::map<std::string, std::string> manifest;   // config echo, epoch, rng state
    std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;
};

void write_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::string& path);

/// FNV-1a over the whole file, for dataset/checkpoint identity in reports.
std::uint64_t file_checksum(const std::string& path);

}  // namespace cmanet::io
