#include "cmanet/dataio.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

namespace cmanet::io {

namespace {

constexpr char kDatasetMagic[4] = {'C', 'S', 'I', 'D'};
constexpr char kCheckpointMagic[4] = {'C', 'K', 'P', 'T'};
constexpr std::uint32_t kDatasetVersion = 1;
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
    T value;
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw FormatError(std::string("truncated file while reading ") + what);
    return value;
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const char* what) {
    const auto len = read_pod<std::uint32_t>(in, what);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw FormatError(std::string("truncated file while reading ") + what);
    return s;
}

void check_magic(std::istream& in, const char expected[4], const char* kind) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, expected, 4) != 0)
        throw FormatError(std::string("bad magic, not a ") + kind + " file");
}

void write_vec3(std::ostream& out, const Eigen::Vector3d& v) {
    write_pod(out, v.x());
    write_pod(out, v.y());
    write_pod(out, v.z());
}

Eigen::Vector3d read_vec3(std::istream& in, const char* what) {
    Eigen::Vector3d v;
    v.x() = read_pod<double>(in, what);
    v.y() = read_pod<double>(in, what);
    v.z() = read_pod<double>(in, what);
    return v;
}

}  // namespace

DatasetRecord to_record(const sim::Sample& sample) {
    DatasetRecord record;
    record.position = sample.position;
    record.csi.reserve(sample.csi.data().size());
    for (const auto& z : sample.csi.data())
        record.csi.emplace_back(static_cast<float>(z.real()),
                                static_cast<float>(z.imag()));
    return record;
}

double compute_norm_scale(const std::vector<DatasetRecord>& records) {
    double sum_sq = 0.0;
    std::size_t count = 0;
    for (const auto& record : records) {
        for (const auto& z : record.csi) {
            sum_sq += static_cast<double>(z.real()) * z.real() +
                      static_cast<double>(z.imag()) * z.imag();
            count += 2;
        }
    }
    if (count == 0) return 1.0;
    const double rms = std::sqrt(sum_sq / static_cast<double>(count));
    return rms > 0.0 ? rms : 1.0;
}

void write_dataset(const std::string& path, const Dataset& dataset) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");

    const DatasetMeta& meta = dataset.meta;
    out.write(kDatasetMagic, 4);
    write_pod(out, kDatasetVersion);
    write_pod(out, meta.num_bs);
    write_pod(out, meta.num_antennas);
    write_pod(out, meta.num_subcarriers);
    write_pod<std::uint64_t>(out, dataset.records.size());
    write_pod(out, meta.carrier_hz);
    write_pod(out, meta.spacing_hz);
    write_vec3(out, meta.ue_min);
    write_vec3(out, meta.ue_max);
    if (meta.bs_positions.size() != meta.num_bs)
        throw std::runtime_error("dataset meta: bs_positions size != L");
    for (const auto& bs : meta.bs_positions) write_vec3(out, bs);
    write_pod(out, meta.norm_scale);
    write_pod(out, meta.seed);

    const std::size_t scalars = meta.csi_scalars();
    for (const auto& record : dataset.records) {
        if (record.csi.size() * 2 != scalars)
            throw std::runtime_error("dataset record: CSI size mismatch");
        write_vec3(out, record.position);
        out.write(reinterpret_cast<const char*>(record.csi.data()),
                  static_cast<std::streamsize>(scalars * sizeof(float)));
    }
    if (!out) throw std::runtime_error("write failed on " + path);
}

Dataset read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    check_magic(in, kDatasetMagic, "dataset");
    const auto version = read_pod<std::uint32_t>(in, "version");
    if (version != kDatasetVersion)
        throw FormatError("dataset version mismatch: file has " +
                          std::to_string(version) + ", expected " +
                          std::to_string(kDatasetVersion));

    Dataset dataset;
    DatasetMeta& meta = dataset.meta;
    meta.num_bs = read_pod<std::uint32_t>(in, "L");
    meta.num_antennas = read_pod<std::uint32_t>(in, "M");
    meta.num_subcarriers = read_pod<std::uint32_t>(in, "N");
    const auto count = read_pod<std::uint64_t>(in, "sample count");
    meta.carrier_hz = read_pod<double>(in, "carrier");
    meta.spacing_hz = read_pod<double>(in, "spacing");
    meta.ue_min = read_vec3(in, "ue_min");
    meta.ue_max = read_vec3(in, "ue_max");
    if (meta.num_bs == 0 || meta.num_antennas == 0 || meta.num_subcarriers == 0)
        throw FormatError("dataset header: zero dimension");
    meta.bs_positions.resize(meta.num_bs);
    for (auto& bs : meta.bs_positions) bs = read_vec3(in, "bs position");
    meta.norm_scale = read_pod<double>(in, "norm scale");
    meta.seed = read_pod<std::uint64_t>(in, "seed");

    // Header shapes must match the remaining byte length exactly.
    const std::size_t record_bytes =
        3 * sizeof(double) + meta.csi_scalars() * sizeof(float);
    const auto body_start = in.tellg();
    in.seekg(0, std::ios::end);
    const auto file_end = in.tellg();
    in.seekg(body_start);
    const auto remaining = static_cast<std::uint64_t>(file_end - body_start);
    if (remaining != count * record_bytes)
        throw FormatError("dataset body length " + std::to_string(remaining) +
                          " contradicts header (expected " +
                          std::to_string(count * record_bytes) + " bytes)");

    dataset.records.resize(count);
    for (auto& record : dataset.records) {
        record.position = read_vec3(in, "record position");
        record.csi.resize(meta.csi_scalars() / 2);
        in.read(reinterpret_cast<char*>(record.csi.data()),
                static_cast<std::streamsize>(meta.csi_scalars() * sizeof(float)));
        if (!in) throw FormatError("truncated dataset record");
    }
    return dataset;
}

Dataset build_dataset(const sim::Scene& scene, std::size_t count,
                      const std::string& path, int workers) {
    scene.validate();
    if (count < 1) throw std::invalid_argument("build_dataset: count >= 1");
    if (workers < 1) workers = 1;

    Dataset dataset;
    dataset.records.resize(count);
    auto generate_range = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            dataset.records[i] = to_record(
                sim::generate_sample(scene, scene.seed ^ static_cast<std::uint64_t>(i)));
        }
    };
    if (workers == 1) {
        generate_range(0, count);
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        const std::size_t chunk = 64;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t begin = next.fetch_add(chunk);
                    if (begin >= count) return;
                    generate_range(begin, std::min(begin + chunk, count));
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    DatasetMeta& meta = dataset.meta;
    meta.num_bs = static_cast<std::uint32_t>(scene.num_bs());
    meta.num_antennas = static_cast<std::uint32_t>(scene.array.num_elements());
    meta.num_subcarriers = static_cast<std::uint32_t>(scene.n_subcarriers);
    meta.carrier_hz = scene.carrier_hz;
    meta.spacing_hz = scene.subcarrier_spacing_hz;
    meta.ue_min = scene.ue_min;
    meta.ue_max = scene.ue_max;
    meta.bs_positions.reserve(scene.num_bs());
    for (const auto& bs : scene.bs_list) meta.bs_positions.push_back(bs.position);
    meta.norm_scale = compute_norm_scale(dataset.records);
    meta.seed = scene.seed;

    write_dataset(path, dataset);
    return dataset;
}

void write_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(kCheckpointMagic, 4);
    write_pod(out, kCheckpointVersion);
    write_pod<std::uint32_t>(out,
                             static_cast<std::uint32_t>(checkpoint.manifest.size()));
    for (const auto& [key, value] : checkpoint.manifest) {
        write_string(out, key);
        write_string(out, value);
    }
    write_pod<std::uint32_t>(out,
                             static_cast<std::uint32_t>(checkpoint.tensors.size()));
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : checkpoint.tensors) {
        write_string(out, name);
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rows()));
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.cols()));
        write_pod(out, offset);
        offset += static_cast<std::uint64_t>(tensor.size()) * sizeof(double);
    }
    write_pod(out, offset);   // total blob bytes
    for (const auto& [name, tensor] : checkpoint.tensors) {
        // Row-major on disk regardless of Eigen's in-memory layout.
        for (Eigen::Index i = 0; i < tensor.rows(); ++i)
            for (Eigen::Index j = 0; j < tensor.cols(); ++j)
                write_pod(out, tensor(i, j));
    }
    if (!out) throw std::runtime_error("write failed on " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    check_magic(in, kCheckpointMagic, "checkpoint");
    const auto version = read_pod<std::uint32_t>(in, "version");
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint version mismatch: file has " +
                          std::to_string(version));

    Checkpoint checkpoint;
    const auto kv_count = read_pod<std::uint32_t>(in, "manifest size");
    for (std::uint32_t i = 0; i < kv_count; ++i) {
        std::string key = read_string(in, "manifest key");
        checkpoint.manifest[key] = read_string(in, "manifest value");
    }
    const auto tensor_count = read_pod<std::uint32_t>(in, "tensor count");
    struct Header {
        std::string name;
        std::uint32_t rows, cols;
        std::uint64_t offset;
    };
    std::vector<Header> headers(tensor_count);
    for (auto& h : headers) {
        h.name = read_string(in, "tensor name");
        h.rows = read_pod<std::uint32_t>(in, "tensor rows");
        h.cols = read_pod<std::uint32_t>(in, "tensor cols");
        h.offset = read_pod<std::uint64_t>(in, "tensor offset");
    }
    const auto blob_bytes = read_pod<std::uint64_t>(in, "blob size");
    std::uint64_t expected_offset = 0;
    for (const auto& h : headers) {
        const std::uint64_t bytes =
            std::uint64_t{h.rows} * h.cols * sizeof(double);
        if (h.offset != expected_offset || h.offset + bytes > blob_bytes)
            throw FormatError("checkpoint tensor '" + h.name +
                              "' has inconsistent offset");
        expected_offset += bytes;
    }
    if (expected_offset != blob_bytes)
        throw FormatError("checkpoint blob length contradicts tensor shapes");

    for (const auto& h : headers) {
        Eigen::MatrixXd tensor(h.rows, h.cols);
        for (std::uint32_t i = 0; i < h.rows; ++i)
            for (std::uint32_t j = 0; j < h.cols; ++j)
                tensor(i, j) = read_pod<double>(in, "tensor data");
        checkpoint.tensors.emplace_back(h.name, std::move(tensor));
    }
    return checkpoint;
}

std::uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::uint64_t hash = 1469598103934665603ull;   // FNV-1a
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            hash ^= static_cast<unsigned char>(buf[i]);
            hash *= 1099511628211ull;
        }
        if (!in) break;
    }
    return hash;
}

}  // namespace cmanet::io
