#pragma once

// Adam training loop with gradient clipping, periodic validation,
// checkpointing and a CSV metrics log.

#include "cmanet/dataio.hpp"
#include "cmanet/model.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cmanet::train {

enum class DataMode { fixed_dataset, fresh_per_epoch };

struct TrainConfig {
    int epochs = 140;
    int samples_per_epoch = 10000;   // fresh-per-epoch mode only
    int val_every = 20;
    int val_samples = 1000;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 5.0;
    DataMode data_mode = DataMode::fixed_dataset;
    std::uint64_t seed = 0;
};

struct AdamState {
    std::vector<Eigen::MatrixXd> m;
    std::vector<Eigen::MatrixXd> v;
    std::uint64_t step = 0;

    static AdamState zeros_like(const model::ModelParams& params);
};

/// Standard Adam with bias correction, applied to the gradients currently
/// held on the parameter tensors. Throws on non-finite gradients, naming
/// the offending parameter.
void adam_step(const model::ModelParams& params, AdamState& state,
               const TrainConfig& config);

/// Scales all parameter gradients so their global norm is at most max_norm;
/// returns the pre-clip norm.
double clip_gradients(const model::ModelParams& params, double max_norm);

/// Formatted, standardized H_2 for one stored record.
Eigen::MatrixXd record_h2(const io::DatasetRecord& record,
                          const io::DatasetMeta& meta,
                          const model::Normalizer& normalizer);

model::Normalizer normalizer_from_meta(const io::DatasetMeta& meta);

/// One pass over the given record indices in shuffled mini-batches;
/// returns the mean batch loss. Throws on a non-finite loss, naming the
/// batch index.
double train_epoch(const io::Dataset& data, const std::vector<std::size_t>& order,
                   const model::ModelParams& params,
                   const model::ModelConfig& model_config, AdamState& state,
                   const TrainConfig& config);

/// Final-estimate 3D errors in meters over dataset records [begin, end),
/// evaluated in mini-batches.
std::vector<double> position_errors(const io::Dataset& data, std::size_t begin,
                                    std::size_t end,
                                    const model::ModelParams& params,
                                    const model::ModelConfig& model_config,
                                    const model::Normalizer& normalizer,
                                    int batch_size = 64);

struct FitOptions {
    TrainConfig train;
    model::ModelConfig model;
    std::string out_dir;                 // checkpoints + metrics.csv
    const sim::Scene* scene = nullptr;   // required in fresh-per-epoch mode
    std::string resume_from;             // checkpoint path, optional
    bool quiet = false;
};

struct FitSummary {
    std::string final_checkpoint;
    std::string metrics_path;
    double final_train_loss = 0.0;
    double final_val_median_m = 0.0;
    double final_val_p90_m = 0.0;
    int epochs_run = 0;
};

/// Runs the training protocol: every val_every epochs evaluates median/p90
/// error on the validation set, appends a metrics row and writes a
/// checkpoint. `train_data` supplies the fixed dataset (and its metadata in
/// fresh mode); `val_data` the held-out validation set.
FitSummary fit(const FitOptions& options, const io::Dataset& train_data,
               const io::Dataset& val_data,
               model::ModelParams* trained = nullptr,
               model::Normalizer* normalizer_out = nullptr);

// Checkpoint packing. The manifest carries the model config, epoch,
// optimizer step, shuffle-RNG state and the normalizer.
io::Checkpoint make_checkpoint(const model::ModelConfig& config,
                               const model::ModelParams& params,
                               const AdamState& state,
                               const model::Normalizer& normalizer, int epoch,
                               const std::mt19937_64& rng);

struct LoadedCheckpoint {
    model::ModelConfig config;
    model::ModelParams params;
    AdamState state;
    model::Normalizer normalizer;
    int epoch = 0;
    std::mt19937_64 rng;
};

LoadedCheckpoint unpack_checkpoint(const io::Checkpoint& checkpoint);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace cmanet::train
