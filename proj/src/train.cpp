#include "cmanet/train.hpp"

#include "cmanet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cmanet::train {

using nc::Matrix;

AdamState AdamState::zeros_like(const model::ModelParams& params) {
    AdamState state;
    for (const auto& [name, tensor] : params.named()) {
        state.m.push_back(Matrix::Zero(tensor->rows(), tensor->cols()));
        state.v.push_back(Matrix::Zero(tensor->rows(), tensor->cols()));
    }
    return state;
}

void adam_step(const model::ModelParams& params, AdamState& state,
               const TrainConfig& config) {
    const auto named = params.named();
    if (state.m.size() != named.size())
        throw std::invalid_argument("adam_step: state does not match parameters");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, double(state.step));
    for (size_t i = 0; i < named.size(); ++i) {
        const auto& [name, tensor] = named[i];
        const Matrix grad = tensor->grad.size() > 0
                                ? tensor->grad
                                : Matrix::Zero(tensor->rows(), tensor->cols());
        if (!grad.allFinite())
            throw std::runtime_error("adam_step: non-finite gradient in " + name);
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grad;
        state.v[i] = config.beta2 * state.v[i] +
                     (1.0 - config.beta2) * grad.cwiseProduct(grad);
        const Matrix m_hat = state.m[i] / bc1;
        const Matrix v_hat = state.v[i] / bc2;
        tensor->value -= config.learning_rate *
                         (m_hat.array() / (v_hat.array().sqrt() + config.adam_eps))
                             .matrix();
    }
}

double clip_gradients(const model::ModelParams& params, double max_norm) {
    double sum_sq = 0.0;
    for (const auto& [name, tensor] : params.named())
        if (tensor->grad.size() > 0) sum_sq += tensor->grad.squaredNorm();
    const double norm = std::sqrt(sum_sq);
    if (norm > max_norm && norm > 0.0) {
        const double factor = max_norm / norm;
        for (const auto& [name, tensor] : params.named())
            if (tensor->grad.size() > 0) tensor->grad *= factor;
    }
    return norm;
}

model::Normalizer normalizer_from_meta(const io::DatasetMeta& meta) {
    model::Normalizer normalizer;
    normalizer.csi_scale = meta.norm_scale;
    normalizer.box_min = meta.ue_min;
    normalizer.box_max = meta.ue_max;
    return normalizer;
}

Eigen::MatrixXd record_h2(const io::DatasetRecord& record,
                          const io::DatasetMeta& meta,
                          const model::Normalizer& normalizer) {
    const int n_dim = static_cast<int>(meta.num_subcarriers);
    const int m_dim = static_cast<int>(meta.num_antennas);
    const int l_dim = static_cast<int>(meta.num_bs);
    Eigen::MatrixXd h2(l_dim, 2 * m_dim * n_dim);
    for (int l = 0; l < l_dim; ++l) {
        for (int m = 0; m < m_dim; ++m) {
            for (int n = 0; n < n_dim; ++n) {
                const auto& z = record.csi[(static_cast<size_t>(l) * m_dim + m) * n_dim + n];
                h2(l, (2 * m) * n_dim + n) = z.real();
                h2(l, (2 * m + 1) * n_dim + n) = z.imag();
            }
        }
    }
    return h2 / normalizer.csi_scale;
}

namespace {

struct Batch {
    std::vector<Eigen::MatrixXd> h2;
    Eigen::MatrixXd targets;   // B x 3, normalized
};

Batch assemble_batch(const io::Dataset& data,
                     const std::vector<std::size_t>& order, std::size_t begin,
                     std::size_t end, const model::Normalizer& normalizer) {
    Batch batch;
    batch.h2.reserve(end - begin);
    batch.targets.resize(static_cast<Eigen::Index>(end - begin), 3);
    for (std::size_t i = begin; i < end; ++i) {
        const auto& record = data.records[order[i]];
        batch.h2.push_back(record_h2(record, data.meta, normalizer));
        batch.targets.row(static_cast<Eigen::Index>(i - begin)) =
            normalizer.position_to_unit(record.position).transpose();
    }
    return batch;
}

}  // namespace

double train_epoch(const io::Dataset& data, const std::vector<std::size_t>& order,
                   const model::ModelParams& params,
                   const model::ModelConfig& model_config, AdamState& state,
                   const TrainConfig& config) {
    if (order.empty()) throw std::invalid_argument("train_epoch: empty dataset");
    const model::Normalizer normalizer = normalizer_from_meta(data.meta);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t end =
            std::min(begin + static_cast<std::size_t>(config.batch_size),
                     order.size());
        Batch batch = assemble_batch(data, order, begin, end, normalizer);
        model::ForwardResult result =
            model::forward_batch(batch.h2, params, model_config);
        nc::Tensor loss = model::wmse_loss(result, batch.targets);
        const double loss_value = loss->value(0, 0);
        if (!std::isfinite(loss_value))
            throw std::runtime_error("train_epoch: non-finite loss at batch " +
                                     std::to_string(batches));
        nc::backward(loss);
        clip_gradients(params, config.clip_norm);
        adam_step(params, state, config);
        loss_sum += loss_value;
        ++batches;
    }
    return loss_sum / static_cast<double>(batches);
}

std::vector<double> position_errors(const io::Dataset& data, std::size_t begin,
                                    std::size_t end,
                                    const model::ModelParams& params,
                                    const model::ModelConfig& model_config,
                                    const model::Normalizer& normalizer,
                                    int batch_size) {
    std::vector<double> errors;
    errors.reserve(end - begin);
    std::vector<std::size_t> order(end - begin);
    std::iota(order.begin(), order.end(), begin);
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(batch_size)) {
        const std::size_t stop =
            std::min(at + static_cast<std::size_t>(batch_size), order.size());
        Batch batch = assemble_batch(data, order, at, stop, normalizer);
        model::ForwardResult result =
            model::forward_batch(batch.h2, params, model_config);
        for (Eigen::Index b = 0; b < result.final->rows(); ++b) {
            const Eigen::Vector3d pred = normalizer.unit_to_meters(
                result.final->value.row(b).transpose());
            const Eigen::Vector3d truth =
                data.records[order[at + static_cast<std::size_t>(b)]].position;
            errors.push_back((pred - truth).norm());
        }
    }
    return errors;
}

namespace {

std::string serialize_rng(const std::mt19937_64& rng) {
    std::ostringstream out;
    out << rng;
    return out.str();
}

std::mt19937_64 deserialize_rng(const std::string& text) {
    std::mt19937_64 rng;
    std::istringstream in(text);
    in >> rng;
    if (!in) throw io::FormatError("checkpoint: unreadable RNG state");
    return rng;
}

io::Dataset fresh_epoch_dataset(const sim::Scene& scene,
                                const io::DatasetMeta& meta, int epoch,
                                int count) {
    io::Dataset data;
    data.meta = meta;
    data.records.reserve(count);
    const std::uint64_t base =
        scene.seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(epoch + 1);
    for (int i = 0; i < count; ++i)
        data.records.push_back(io::to_record(
            sim::generate_sample(scene, base ^ static_cast<std::uint64_t>(i))));
    return data;
}

}  // namespace

io::Checkpoint make_checkpoint(const model::ModelConfig& config,
                               const model::ModelParams& params,
                               const AdamState& state,
                               const model::Normalizer& normalizer, int epoch,
                               const std::mt19937_64& rng) {
    io::Checkpoint checkpoint;
    auto& kv = checkpoint.manifest;
    kv["format"] = "cmanet-checkpoint";
    kv["num_bs"] = std::to_string(config.num_bs);
    kv["num_antennas"] = std::to_string(config.num_antennas);
    kv["num_subcarriers"] = std::to_string(config.num_subcarriers);
    kv["d_k"] = std::to_string(config.d_k);
    kv["lstm_hidden"] = std::to_string(config.lstm_hidden);
    kv["mlp_hidden"] = std::to_string(config.mlp_hidden);
    kv["variant"] = model::to_string(config.variant);
    kv["epoch"] = std::to_string(epoch);
    kv["adam_step"] = std::to_string(state.step);
    kv["rng_state"] = serialize_rng(rng);
    std::ostringstream scale;
    scale.precision(17);
    scale << normalizer.csi_scale;
    kv["csi_scale"] = scale.str();
    for (int axis = 0; axis < 3; ++axis) {
        std::ostringstream lo, hi;
        lo.precision(17);
        hi.precision(17);
        lo << normalizer.box_min(axis);
        hi << normalizer.box_max(axis);
        kv["box_min." + std::to_string(axis)] = lo.str();
        kv["box_max." + std::to_string(axis)] = hi.str();
    }

    const auto named = params.named();
    for (const auto& [name, tensor] : named)
        checkpoint.tensors.emplace_back(name, tensor->value);
    for (size_t i = 0; i < named.size(); ++i) {
        checkpoint.tensors.emplace_back("adam.m." + named[i].first, state.m[i]);
        checkpoint.tensors.emplace_back("adam.v." + named[i].first, state.v[i]);
    }
    return checkpoint;
}

LoadedCheckpoint unpack_checkpoint(const io::Checkpoint& checkpoint) {
    const auto& kv = checkpoint.manifest;
    auto need = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end())
            throw io::FormatError("checkpoint manifest missing key: " + key);
        return it->second;
    };
    if (need("format") != "cmanet-checkpoint")
        throw io::FormatError("not a cmanet checkpoint");

    LoadedCheckpoint loaded;
    loaded.config.num_bs = std::stoi(need("num_bs"));
    loaded.config.num_antennas = std::stoi(need("num_antennas"));
    loaded.config.num_subcarriers = std::stoi(need("num_subcarriers"));
    loaded.config.d_k = std::stoi(need("d_k"));
    loaded.config.lstm_hidden = std::stoi(need("lstm_hidden"));
    loaded.config.mlp_hidden = std::stoi(need("mlp_hidden"));
    loaded.config.variant = model::variant_from_string(need("variant"));
    loaded.epoch = std::stoi(need("epoch"));
    loaded.rng = deserialize_rng(need("rng_state"));
    loaded.normalizer.csi_scale = std::stod(need("csi_scale"));
    for (int axis = 0; axis < 3; ++axis) {
        loaded.normalizer.box_min(axis) =
            std::stod(need("box_min." + std::to_string(axis)));
        loaded.normalizer.box_max(axis) =
            std::stod(need("box_max." + std::to_string(axis)));
    }

    loaded.params = model::ModelParams::init(loaded.config, 0);
    auto find_tensor = [&](const std::string& name) -> const Eigen::MatrixXd& {
        for (const auto& [tname, tensor] : checkpoint.tensors)
            if (tname == name) return tensor;
        throw io::FormatError("checkpoint missing tensor: " + name);
    };
    const auto named = loaded.params.named();
    loaded.state.step = std::stoull(need("adam_step"));
    for (const auto& [name, tensor] : named) {
        const Eigen::MatrixXd& stored = find_tensor(name);
        if (stored.rows() != tensor->rows() || stored.cols() != tensor->cols())
            throw io::FormatError("checkpoint tensor shape mismatch: " + name);
        tensor->value = stored;
        loaded.state.m.push_back(find_tensor("adam.m." + name));
        loaded.state.v.push_back(find_tensor("adam.v." + name));
    }
    return loaded;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    return unpack_checkpoint(io::read_checkpoint(path));
}

FitSummary fit(const FitOptions& options, const io::Dataset& train_data,
               const io::Dataset& val_data, model::ModelParams* trained,
               model::Normalizer* normalizer_out) {
    const TrainConfig& tc = options.train;
    if (tc.epochs < 1 || tc.batch_size < 1 || tc.learning_rate <= 0.0)
        throw std::invalid_argument("fit: invalid training configuration");
    if (tc.data_mode == DataMode::fresh_per_epoch && options.scene == nullptr)
        throw std::invalid_argument("fit: fresh-per-epoch mode needs a scene");
    if (train_data.records.empty())
        throw std::invalid_argument("fit: empty training dataset");

    std::filesystem::create_directories(options.out_dir);
    const std::string metrics_path = options.out_dir + "/metrics.csv";

    model::ModelParams params;
    AdamState state;
    std::mt19937_64 rng;
    int start_epoch = 0;
    model::Normalizer normalizer = normalizer_from_meta(train_data.meta);
    if (!options.resume_from.empty()) {
        LoadedCheckpoint loaded = load_checkpoint(options.resume_from);
        params = loaded.params;
        state = std::move(loaded.state);
        rng = loaded.rng;
        start_epoch = loaded.epoch;
        normalizer = loaded.normalizer;
    } else {
        params = model::ModelParams::init(options.model, tc.seed);
        state = AdamState::zeros_like(params);
        rng.seed(tc.seed);
    }

    std::ofstream metrics(metrics_path,
                          start_epoch > 0 ? std::ios::app : std::ios::out);
    if (!metrics) throw std::runtime_error("cannot open " + metrics_path);
    if (start_epoch == 0) {
        metrics << "# variant=" << model::to_string(options.model.variant)
                << " lr=" << tc.learning_rate << " batch=" << tc.batch_size
                << " clip=" << tc.clip_norm << " seed=" << tc.seed
                << " epochs=" << tc.epochs << " beta1=" << tc.beta1
                << " beta2=" << tc.beta2 << " eps=" << tc.adam_eps << "\n";
        metrics << "epoch,train_loss,val_median_m,val_p90_m\n";
    }

    FitSummary summary;
    summary.metrics_path = metrics_path;
    for (int epoch = start_epoch; epoch < tc.epochs; ++epoch) {
        const io::Dataset* epoch_data = &train_data;
        io::Dataset fresh;
        if (tc.data_mode == DataMode::fresh_per_epoch) {
            fresh = fresh_epoch_dataset(*options.scene, train_data.meta, epoch,
                                        tc.samples_per_epoch);
            epoch_data = &fresh;
        }
        std::vector<std::size_t> order(epoch_data->records.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        summary.final_train_loss = train_epoch(*epoch_data, order, params,
                                               options.model, state, tc);
        summary.epochs_run = epoch + 1;

        const bool validate =
            (epoch + 1) % tc.val_every == 0 || epoch + 1 == tc.epochs;
        if (validate) {
            const std::size_t val_count = std::min(
                val_data.records.size(), static_cast<std::size_t>(tc.val_samples));
            std::vector<double> errors = position_errors(
                val_data, 0, val_count, params, options.model, normalizer);
            std::sort(errors.begin(), errors.end());
            summary.final_val_median_m = eval::percentile(errors, 50.0);
            summary.final_val_p90_m = eval::percentile(errors, 90.0);
            metrics << epoch + 1 << "," << summary.final_train_loss << ","
                    << summary.final_val_median_m << ","
                    << summary.final_val_p90_m << "\n";
            metrics.flush();

            const std::string checkpoint_path =
                options.out_dir + "/epoch_" + std::to_string(epoch + 1) + ".ckpt";
            io::write_checkpoint(checkpoint_path,
                                 make_checkpoint(options.model, params, state,
                                                 normalizer, epoch + 1, rng));
            summary.final_checkpoint = checkpoint_path;
            if (!options.quiet)
                std::cout << "epoch " << epoch + 1 << "  loss "
                          << summary.final_train_loss << "  val median "
                          << summary.final_val_median_m << " m  p90 "
                          << summary.final_val_p90_m << " m\n";
        }
    }

    if (trained != nullptr) *trained = params;
    if (normalizer_out != nullptr) *normalizer_out = normalizer;
    return summary;
}

}  // namespace cmanet::train
