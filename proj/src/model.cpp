#include "cmanet/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace cmanet::model {

using nc::Matrix;
using nc::Tensor;

Variant variant_from_string(const std::string& name) {
    if (name == "cma") return Variant::cma;
    if (name == "plain") return Variant::plain;
    throw std::invalid_argument("unknown model variant: " + name);
}

std::string to_string(Variant variant) {
    return variant == Variant::cma ? "cma" : "plain";
}

ModelConfig ModelConfig::for_dataset(int l, int m, int n) {
    ModelConfig config;
    config.num_bs = l;
    config.num_antennas = m;
    config.num_subcarriers = n;
    config.d_k = std::min(config.embed_dim(), 128);
    return config;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
    return {
        {"attn.w_q", w_q},   {"attn.w_k", w_k},   {"attn.w_v", w_v},
        {"attn.w_o", w_o},   {"lstm.w_xi", w_xi}, {"lstm.w_hi", w_hi},
        {"lstm.b_i", b_i},   {"lstm.w_xf", w_xf}, {"lstm.w_hf", w_hf},
        {"lstm.b_f", b_f},   {"lstm.w_xg", w_xg}, {"lstm.w_hg", w_hg},
        {"lstm.b_g", b_g},   {"lstm.w_xo", w_xo}, {"lstm.w_ho", w_ho},
        {"lstm.b_o", b_o},   {"mlp.w1", mlp_w1},  {"mlp.b1", mlp_b1},
        {"mlp.w2", mlp_w2},  {"mlp.b2", mlp_b2},
    };
}

namespace {

Matrix glorot_uniform(int rows, int cols, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / (rows + cols));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = u(rng);
    return m;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
    if (config.d_k < 1 || config.lstm_hidden < 1 || config.mlp_hidden < 1)
        throw std::invalid_argument("model config: widths must be >= 1");
    std::mt19937_64 rng(seed);
    const int embed = config.embed_dim();
    const int step = config.step_dim();
    const int hidden = config.lstm_hidden;

    ModelParams p;
    p.w_q = nc::leaf(glorot_uniform(embed, config.d_k, rng));
    p.w_k = nc::leaf(glorot_uniform(embed, config.d_k, rng));
    p.w_v = nc::leaf(glorot_uniform(embed, config.d_k, rng));
    p.w_o = nc::leaf(glorot_uniform(config.d_k, embed, rng));

    auto gate = [&](Tensor& wx, Tensor& wh, Tensor& b, double bias_fill) {
        wx = nc::leaf(glorot_uniform(step, hidden, rng));
        wh = nc::leaf(glorot_uniform(hidden, hidden, rng));
        b = nc::leaf(Matrix::Constant(1, hidden, bias_fill));
    };
    gate(p.w_xi, p.w_hi, p.b_i, 0.0);
    gate(p.w_xf, p.w_hf, p.b_f, 1.0);   // forget gate starts open
    gate(p.w_xg, p.w_hg, p.b_g, 0.0);
    gate(p.w_xo, p.w_ho, p.b_o, 0.0);

    p.mlp_w1 = nc::leaf(glorot_uniform(hidden, config.mlp_hidden, rng));
    p.mlp_b1 = nc::leaf(Matrix::Zero(1, config.mlp_hidden));
    p.mlp_w2 = nc::leaf(glorot_uniform(config.mlp_hidden, 3, rng));
    p.mlp_b2 = nc::leaf(Matrix::Zero(1, 3));
    return p;
}

Eigen::MatrixXd space_domain_format(const sim::CsiTensor& csi) {
    const int l_dim = csi.num_bs();
    const int m_dim = csi.num_antennas();
    const int n_dim = csi.num_subcarriers();
    Eigen::MatrixXd h2(l_dim, 2 * m_dim * n_dim);
    for (int l = 0; l < l_dim; ++l) {
        for (int m = 0; m < m_dim; ++m) {
            for (int n = 0; n < n_dim; ++n) {
                const auto& z = csi.at(l, m, n);
                h2(l, (2 * m) * n_dim + n) = z.real();
                h2(l, (2 * m + 1) * n_dim + n) = z.imag();
            }
        }
    }
    return h2;
}

sim::CsiTensor space_domain_inverse(const Eigen::MatrixXd& h2,
                                    int num_antennas) {
    const int l_dim = static_cast<int>(h2.rows());
    if (num_antennas < 1 || h2.cols() % (2 * num_antennas) != 0)
        throw std::invalid_argument("space_domain_inverse: columns not 2*M*N");
    const int n_dim = static_cast<int>(h2.cols()) / (2 * num_antennas);
    sim::CsiTensor csi(l_dim, num_antennas, n_dim);
    for (int l = 0; l < l_dim; ++l)
        for (int m = 0; m < num_antennas; ++m)
            for (int n = 0; n < n_dim; ++n)
                csi.at(l, m, n) = {h2(l, (2 * m) * n_dim + n),
                                   h2(l, (2 * m + 1) * n_dim + n)};
    return csi;
}

Tensor channel_gain(const Tensor& h2) { return nc::row_l2_norm(h2); }

Tensor self_attention(const Tensor& h2, const ModelParams& params, int d_k) {
    Tensor q = nc::matmul(h2, params.w_q);
    Tensor k = nc::matmul(h2, params.w_k);
    Tensor v = nc::matmul(h2, params.w_v);
    Tensor logits = nc::scale(nc::matmul_nt(q, k), 1.0 / std::sqrt(double(d_k)));
    Tensor attention = nc::softmax_rows(logits);
    return nc::matmul(nc::matmul(attention, v), params.w_o);
}

Tensor cma_mask(const Tensor& h2) {
    // The gain vector is divided by its own RMS before layer normalization;
    // layer_norm's output is unchanged when the variance dominates eps, and
    // the mask becomes invariant to any positive rescaling of H_2.
    Tensor gains = channel_gain(h2);
    const double rms = std::sqrt(gains->value.col(0).array().square().mean());
    if (rms > 0.0) gains = nc::scale(gains, 1.0 / rms);
    return nc::layer_norm(gains);
}

Tensor cma_forward(const Tensor& h2, const ModelParams& params,
                   const ModelConfig& config, const Tensor* mask_override) {
    Tensor attended = self_attention(h2, params, config.d_k);
    if (mask_override != nullptr)
        return nc::scale_rows(attended, *mask_override);
    if (config.variant == Variant::plain) return attended;
    return nc::scale_rows(attended, cma_mask(h2));
}

Tensor reshape_for_decoder(const Tensor& h3, int num_antennas,
                           int num_subcarriers) {
    const int l_dim = static_cast<int>(h3->rows());
    const int a_dim = 2 * num_antennas;
    if (h3->cols() != static_cast<Eigen::Index>(a_dim) * num_subcarriers)
        throw std::invalid_argument("reshape_for_decoder: columns not 2*M*N");
    Matrix h6(num_subcarriers, a_dim * l_dim);
    for (int n = 0; n < num_subcarriers; ++n)
        for (int a = 0; a < a_dim; ++a)
            for (int l = 0; l < l_dim; ++l)
                h6(n, a * l_dim + l) = h3->value(l, a * num_subcarriers + n);
    return nc::make_op(
        std::move(h6), {h3},
        [l_dim, a_dim, num_subcarriers](nc::Node& node) {
            if (!node.parents[0]->requires_grad) return;
            Matrix dx = Matrix::Zero(l_dim, a_dim * num_subcarriers);
            for (int n = 0; n < num_subcarriers; ++n)
                for (int a = 0; a < a_dim; ++a)
                    for (int l = 0; l < l_dim; ++l)
                        dx(l, a * num_subcarriers + n) +=
                            node.grad(n, a * l_dim + l);
            if (node.parents[0]->grad.size() == 0)
                node.parents[0]->grad = std::move(dx);
            else
                node.parents[0]->grad += dx;
        });
}

Tensor stack_rows(const std::vector<Tensor>& blocks) {
    if (blocks.empty()) throw std::invalid_argument("stack_rows: empty input");
    const Eigen::Index cols = blocks[0]->cols();
    Eigen::Index rows = 0;
    for (const auto& b : blocks) {
        if (b->cols() != cols)
            throw std::invalid_argument("stack_rows: column mismatch");
        rows += b->rows();
    }
    Matrix stacked(rows, cols);
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
        stacked.middleRows(at, b->rows()) = b->value;
        at += b->rows();
    }
    return nc::make_op(std::move(stacked), blocks, [](nc::Node& node) {
        Eigen::Index at = 0;
        for (auto& parent : node.parents) {
            if (parent->requires_grad) {
                if (parent->grad.size() == 0)
                    parent->grad = Matrix::Zero(parent->rows(), parent->cols());
                parent->grad += node.grad.middleRows(at, parent->rows());
            }
            at += parent->rows();
        }
    });
}

std::vector<Tensor> decoder_step_inputs(const Tensor& stacked, int batch,
                                        const ModelConfig& config) {
    const int l_dim = config.num_bs;
    const int a_dim = 2 * config.num_antennas;
    const int n_dim = config.num_subcarriers;
    if (stacked->rows() != static_cast<Eigen::Index>(batch) * l_dim ||
        stacked->cols() != static_cast<Eigen::Index>(a_dim) * n_dim)
        throw std::invalid_argument("decoder_step_inputs: shape mismatch");

    std::vector<Tensor> steps;
    steps.reserve(n_dim);
    for (int n = 0; n < n_dim; ++n) {
        Matrix x(batch, a_dim * l_dim);
        for (int b = 0; b < batch; ++b)
            for (int a = 0; a < a_dim; ++a)
                for (int l = 0; l < l_dim; ++l)
                    x(b, a * l_dim + l) = stacked->value(b * l_dim + l,
                                                         a * n_dim + n);
        steps.push_back(nc::make_op(
            std::move(x), {stacked},
            [batch, l_dim, a_dim, n_dim, n](nc::Node& node) {
                auto& parent = *node.parents[0];
                if (!parent.requires_grad) return;
                if (parent.grad.size() == 0)
                    parent.grad = Matrix::Zero(parent.rows(), parent.cols());
                for (int b = 0; b < batch; ++b)
                    for (int a = 0; a < a_dim; ++a)
                        for (int l = 0; l < l_dim; ++l)
                            parent.grad(b * l_dim + l, a * n_dim + n) +=
                                node.grad(b, a * l_dim + l);
            }));
    }
    return steps;
}

namespace {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return nc::add_row_broadcast(nc::matmul(x, w), b);
}

Tensor mlp_head(const Tensor& h, const ModelParams& params) {
    Tensor hidden = nc::relu(linear(h, params.mlp_w1, params.mlp_b1));
    return linear(hidden, params.mlp_w2, params.mlp_b2);
}

}  // namespace

ForwardResult decoder_forward(const std::vector<Tensor>& steps,
                              const ModelParams& params,
                              const ModelConfig& config) {
    if (steps.empty()) throw std::invalid_argument("decoder_forward: no steps");
    const Eigen::Index batch = steps[0]->rows();
    Tensor h = nc::constant(Matrix::Zero(batch, config.lstm_hidden));
    Tensor c = nc::constant(Matrix::Zero(batch, config.lstm_hidden));

    ForwardResult result;
    result.step_outputs.reserve(steps.size());
    for (const Tensor& x : steps) {
        Tensor i = nc::sigmoid(nc::add(linear(x, params.w_xi, params.b_i),
                                       nc::matmul(h, params.w_hi)));
        Tensor f = nc::sigmoid(nc::add(linear(x, params.w_xf, params.b_f),
                                       nc::matmul(h, params.w_hf)));
        Tensor g = nc::tanh_op(nc::add(linear(x, params.w_xg, params.b_g),
                                       nc::matmul(h, params.w_hg)));
        Tensor o = nc::sigmoid(nc::add(linear(x, params.w_xo, params.b_o),
                                       nc::matmul(h, params.w_ho)));
        c = nc::add(nc::mul(f, c), nc::mul(i, g));
        h = nc::mul(o, nc::tanh_op(c));
        result.step_outputs.push_back(mlp_head(h, params));
    }
    result.final = result.step_outputs.back();
    return result;
}

ForwardResult forward_batch(const std::vector<Eigen::MatrixXd>& h2_batch,
                            const ModelParams& params, const ModelConfig& config,
                            const Tensor* mask_override) {
    if (h2_batch.empty())
        throw std::invalid_argument("forward_batch: empty batch");
    std::vector<Tensor> encoded;
    encoded.reserve(h2_batch.size());
    for (const Eigen::MatrixXd& h2_value : h2_batch) {
        if (h2_value.rows() != config.num_bs ||
            h2_value.cols() != config.embed_dim())
            throw std::invalid_argument("forward_batch: H_2 shape mismatch");
        Tensor h2 = nc::constant(h2_value);
        encoded.push_back(cma_forward(h2, params, config, mask_override));
    }
    Tensor stacked = stack_rows(encoded);
    std::vector<Tensor> steps = decoder_step_inputs(
        stacked, static_cast<int>(h2_batch.size()), config);
    return decoder_forward(steps, params, config);
}

Tensor wmse_loss(const ForwardResult& result, const Eigen::MatrixXd& targets) {
    const auto n_steps = result.step_outputs.size();
    if (n_steps == 0) throw std::invalid_argument("wmse_loss: no estimates");
    const Eigen::Index batch = result.step_outputs[0]->rows();
    if (targets.rows() != batch || targets.cols() != 3)
        throw std::invalid_argument("wmse_loss: targets must be batch x 3");
    Tensor target = nc::constant(targets);
    Tensor loss;
    for (size_t k = 0; k < n_steps; ++k) {
        const double weight = static_cast<double>(k + 1) / n_steps;
        Tensor term = nc::scale(
            nc::sum_all(nc::row_l2_norm(nc::sub(target, result.step_outputs[k]))),
            weight);
        loss = loss ? nc::add(loss, term) : term;
    }
    return nc::scale(loss, 1.0 / static_cast<double>(batch));
}

Eigen::MatrixXd predict(const sim::CsiTensor& csi, const ModelParams& params,
                        const ModelConfig& config, const Normalizer& normalizer) {
    ForwardResult result = forward_batch(
        {normalizer.standardize(space_domain_format(csi))}, params, config);
    Eigen::MatrixXd estimates(result.step_outputs.size(), 3);
    for (size_t k = 0; k < result.step_outputs.size(); ++k)
        estimates.row(k) = result.step_outputs[k]->value.row(0);
    return estimates;
}

}  // namespace cmanet::model
