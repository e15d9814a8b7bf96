#pragma once

// CMANet: space-domain formatting of multi-BS CSI, channel-masked attention
// encoder, subcarrier-major reshape, and a frequency-cumulative LSTM decoder
// with a shared MLP head emitting one position estimate per subcarrier.

#include "cmanet/autodiff.hpp"
#include "cmanet/channel.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cmanet::model {

enum class Variant { cma, plain };

Variant variant_from_string(const std::string& name);
std::string to_string(Variant variant);

struct ModelConfig {
    int num_bs = 0;          // L
    int num_antennas = 0;    // M
    int num_subcarriers = 0; // N
    int d_k = 0;
    int lstm_hidden = 64;
    int mlp_hidden = 64;
    Variant variant = Variant::cma;

    int embed_dim() const { return 2 * num_antennas * num_subcarriers; } // 2MN
    int step_dim() const { return 2 * num_antennas * num_bs; }           // 2ML

    static ModelConfig for_dataset(int l, int m, int n);
};

/// All learnable tensors, in a stable named order (checkpoint layout and
/// optimizer slot order both follow it).
struct ModelParams {
    nc::Tensor w_q, w_k, w_v, w_o;                       // attention projections
    nc::Tensor w_xi, w_hi, b_i;                          // LSTM input gate
    nc::Tensor w_xf, w_hf, b_f;                          // forget gate
    nc::Tensor w_xg, w_hg, b_g;                          // cell candidate
    nc::Tensor w_xo, w_ho, b_o;                          // output gate
    nc::Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;           // shared head

    std::vector<std::pair<std::string, nc::Tensor>> named() const;

    /// Uniform +-sqrt(6/(fan_in+fan_out)) for matrices, zero biases except
    /// forget-gate bias 1.
    static ModelParams init(const ModelConfig& config, std::uint64_t seed);
};

/// Maps raw CSI amplitudes and scene coordinates into training units:
/// inputs divided by the dataset RMS, targets mapped affinely to the unit box.
struct Normalizer {
    double csi_scale = 1.0;
    Eigen::Vector3d box_min = Eigen::Vector3d::Zero();
    Eigen::Vector3d box_max = Eigen::Vector3d::Ones();

    Eigen::MatrixXd standardize(const Eigen::MatrixXd& h2) const {
        return h2 / csi_scale;
    }
    Eigen::Vector3d position_to_unit(const Eigen::Vector3d& p) const {
        return ((p - box_min).array() / (box_max - box_min).array()).matrix();
    }
    Eigen::Vector3d unit_to_meters(const Eigen::Vector3d& u) const {
        return box_min + (u.array() * (box_max - box_min).array()).matrix();
    }
};

/// Real/imaginary interleave plus antenna-major flatten: L x M x N complex
/// -> L x 2MN real, row l entry a*N + n with a = 2m (real) / 2m+1 (imag).
Eigen::MatrixXd space_domain_format(const sim::CsiTensor& csi);
/// Exact inverse of space_domain_format.
sim::CsiTensor space_domain_inverse(const Eigen::MatrixXd& h2, int num_antennas);

/// Per-BS Euclidean norm of the formatted rows (the channel gain vector).
nc::Tensor channel_gain(const nc::Tensor& h2);

/// Single-head scaled dot-product attention with learned Q/K/V/O projections;
/// no residual, no feed-forward sublayer.
nc::Tensor self_attention(const nc::Tensor& h2, const ModelParams& params,
                          int d_k);

/// The CMA mask W: channel gains, rescaled by their RMS (making W exactly
/// invariant to positive rescaling of H_2), then layer-normalized.
nc::Tensor cma_mask(const nc::Tensor& h2);

/// Encoder block. Variant cma scales attention rows by the layer-normalized
/// channel gains; plain skips the mask. mask_override (L x 1), when given,
/// replaces the computed mask (test hook).
nc::Tensor cma_forward(const nc::Tensor& h2, const ModelParams& params,
                       const ModelConfig& config,
                       const nc::Tensor* mask_override = nullptr);

/// Index bijection L x 2MN -> N x 2ML: out(n, a*L + l) = in(l, a*N + n).
nc::Tensor reshape_for_decoder(const nc::Tensor& h3, int num_antennas,
                               int num_subcarriers);

/// Stacks B encoder outputs (each L x 2MN) into a B*L x 2MN node.
nc::Tensor stack_rows(const std::vector<nc::Tensor>& blocks);

/// Per-subcarrier decoder inputs from the stacked encoder output:
/// step n is B x 2ML with row b holding sample b's slice, the batched
/// equivalent of row n of reshape_for_decoder.
std::vector<nc::Tensor> decoder_step_inputs(const nc::Tensor& stacked,
                                            int batch, const ModelConfig& config);

struct ForwardResult {
    std::vector<nc::Tensor> step_outputs;  // N tensors, each B x 3
    nc::Tensor final;                      // alias of step_outputs.back()
};

/// Runs the LSTM over the step inputs, applying the shared MLP head at
/// every step. Zero initial hidden and cell state.
ForwardResult decoder_forward(const std::vector<nc::Tensor>& steps,
                              const ModelParams& params,
                              const ModelConfig& config);

/// Full forward pass over a batch of standardized H_2 matrices.
ForwardResult forward_batch(const std::vector<Eigen::MatrixXd>& h2_batch,
                            const ModelParams& params, const ModelConfig& config,
                            const nc::Tensor* mask_override = nullptr);

/// L = sum_k (k/N) ||target - xhat_k||_2, averaged over the batch.
/// targets is B x 3 in normalized coordinates.
nc::Tensor wmse_loss(const ForwardResult& result, const Eigen::MatrixXd& targets);

/// Convenience single-sample inference: returns the N x 3 per-subcarrier
/// estimates in normalized coordinates (row N-1 is the final estimate).
Eigen::MatrixXd predict(const sim::CsiTensor& csi, const ModelParams& params,
                        const ModelConfig& config, const Normalizer& normalizer);

}  // namespace cmanet::model
