#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
// Graphs are built per forward pass (define-by-run); backward() walks the
// graph once in reverse topological order and accumulates gradients into
// every node that requires them.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cmanet::nc {

using Matrix = Eigen::MatrixXd;

class Node;
using Tensor = std::shared_ptr<Node>;

/// One node of the compute graph. Vectors are p x 1 matrices, scalars 1 x 1.
class Node {
public:
    Matrix value;
    Matrix grad;                 // allocated lazily during backward()
    bool requires_grad = false;
    std::vector<Tensor> parents;
    // Accumulates this node's grad into its parents' grads.
    std::function<void(Node&)> backward_op;

    Node() = default;
    explicit Node(Matrix v, bool req = false)
        : value(std::move(v)), requires_grad(req) {}

    Eigen::Index rows() const { return value.rows(); }
    Eigen::Index cols() const { return value.cols(); }
};

/// Leaf with requires_grad = true (a learnable parameter).
Tensor leaf(Matrix v);
/// Leaf that never receives a gradient (data, targets).
Tensor constant(Matrix v);

/// Generic op constructor, exposed so downstream modules can define
/// structured ops (index permutations, gathers) without touching internals.
Tensor make_op(Matrix value, std::vector<Tensor> parents,
               std::function<void(Node&)> backward_op);

// --- arithmetic -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T without materializing the transpose node.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);   // elementwise
Tensor scale(const Tensor& a, double c);
/// x + replicated row vector b (1 x q), the linear-layer bias pattern.
Tensor add_row_broadcast(const Tensor& x, const Tensor& b);
/// Row l of x scaled by w(l); w is p x 1.
Tensor scale_rows(const Tensor& x, const Tensor& w);

// --- nonlinearities -------------------------------------------------------

Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor relu(const Tensor& x);

// --- reductions / normalizations -------------------------------------------

/// Numerically stable row-wise softmax (per-row max subtraction).
/// Throws std::invalid_argument on NaN input.
Tensor softmax_rows(const Tensor& x);
/// (x - mean) / sqrt(pop_var + eps) over all entries of a p x 1 vector.
Tensor layer_norm(const Tensor& x, double eps = 1e-5);
/// Euclidean norm of each row: p x q -> p x 1.
Tensor row_l2_norm(const Tensor& x);
/// Sum of all entries -> 1 x 1.
Tensor sum_all(const Tensor& x);

// --- backward / checking ----------------------------------------------------

/// Zeroes gradients of every node reachable from root, seeds d(root)=1
/// (root must be scalar) and propagates. Leaf grads stay valid until the
/// next backward() that touches them.
void backward(const Tensor& root);

/// Rebuilds `f` per evaluation and compares analytic leaf gradients with
/// central finite differences (f(x+h) - f(x-h)) / 2h. Returns the worst
/// relative error over all leaf entries. Throws if f is not scalar-valued.
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  const std::vector<Tensor>& leaves, double h = 1e-5);

}  // namespace cmanet::nc
