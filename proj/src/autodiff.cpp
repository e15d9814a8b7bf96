#include "cmanet/autodiff.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace cmanet::nc {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a->rows() != b->rows() || a->cols() != b->cols()) {
        std::ostringstream msg;
        msg << op << ": shape mismatch " << a->rows() << "x" << a->cols()
            << " vs " << b->rows() << "x" << b->cols();
        throw std::invalid_argument(msg.str());
    }
}

void accumulate(Node& parent, const Matrix& g) {
    if (!parent.requires_grad) return;
    if (parent.grad.size() == 0)
        parent.grad = Matrix::Zero(parent.value.rows(), parent.value.cols());
    parent.grad += g;
}

bool any_parent_requires(const std::vector<Tensor>& parents) {
    for (const auto& p : parents)
        if (p->requires_grad) return true;
    return false;
}

}  // namespace

Tensor leaf(Matrix v) { return std::make_shared<Node>(std::move(v), true); }
Tensor constant(Matrix v) { return std::make_shared<Node>(std::move(v), false); }

Tensor make_op(Matrix value, std::vector<Tensor> parents,
               std::function<void(Node&)> backward_op) {
    auto n = std::make_shared<Node>(std::move(value));
    n->requires_grad = any_parent_requires(parents);
    n->parents = std::move(parents);
    if (n->requires_grad) n->backward_op = std::move(backward_op);
    return n;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a->cols() != b->rows()) {
        std::ostringstream msg;
        msg << "matmul: inner dimensions disagree, " << a->rows() << "x"
            << a->cols() << " * " << b->rows() << "x" << b->cols();
        throw std::invalid_argument(msg.str());
    }
    return make_op(a->value * b->value, {a, b}, [](Node& n) {
        accumulate(*n.parents[0], n.grad * n.parents[1]->value.transpose());
        accumulate(*n.parents[1], n.parents[0]->value.transpose() * n.grad);
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a->cols() != b->cols()) {
        std::ostringstream msg;
        msg << "matmul_nt: inner dimensions disagree, " << a->rows() << "x"
            << a->cols() << " * (" << b->rows() << "x" << b->cols() << ")^T";
        throw std::invalid_argument(msg.str());
    }
    return make_op(a->value * b->value.transpose(), {a, b}, [](Node& n) {
        accumulate(*n.parents[0], n.grad * n.parents[1]->value);
        accumulate(*n.parents[1], n.grad.transpose() * n.parents[0]->value);
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    return make_op(a->value + b->value, {a, b}, [](Node& n) {
        accumulate(*n.parents[0], n.grad);
        accumulate(*n.parents[1], n.grad);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    return make_op(a->value - b->value, {a, b}, [](Node& n) {
        accumulate(*n.parents[0], n.grad);
        accumulate(*n.parents[1], -n.grad);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    return make_op(a->value.cwiseProduct(b->value), {a, b}, [](Node& n) {
        accumulate(*n.parents[0], n.grad.cwiseProduct(n.parents[1]->value));
        accumulate(*n.parents[1], n.grad.cwiseProduct(n.parents[0]->value));
    });
}

Tensor scale(const Tensor& a, double c) {
    return make_op(a->value * c, {a}, [c](Node& n) {
        accumulate(*n.parents[0], n.grad * c);
    });
}

Tensor add_row_broadcast(const Tensor& x, const Tensor& b) {
    if (b->rows() != 1 || b->cols() != x->cols())
        throw std::invalid_argument("add_row_broadcast: b must be 1 x cols(x)");
    return make_op(x->value.rowwise() + b->value.row(0), {x, b}, [](Node& n) {
        accumulate(*n.parents[0], n.grad);
        accumulate(*n.parents[1], n.grad.colwise().sum());
    });
}

Tensor scale_rows(const Tensor& x, const Tensor& w) {
    if (w->cols() != 1 || w->rows() != x->rows())
        throw std::invalid_argument("scale_rows: w must be rows(x) x 1");
    return make_op(w->value.col(0).asDiagonal() * x->value, {x, w}, [](Node& n) {
        const Matrix& xv = n.parents[0]->value;
        const Matrix& wv = n.parents[1]->value;
        accumulate(*n.parents[0], wv.col(0).asDiagonal() * n.grad);
        accumulate(*n.parents[1],
                   n.grad.cwiseProduct(xv).rowwise().sum());
    });
}

Tensor sigmoid(const Tensor& x) {
    Matrix y = (1.0 / (1.0 + (-x->value.array()).exp())).matrix();
    return make_op(std::move(y), {x}, [](Node& n) {
        const auto& y = n.value.array();
        accumulate(*n.parents[0], (n.grad.array() * y * (1.0 - y)).matrix());
    });
}

Tensor tanh_op(const Tensor& x) {
    Matrix y = x->value.array().tanh().matrix();
    return make_op(std::move(y), {x}, [](Node& n) {
        const auto& y = n.value.array();
        accumulate(*n.parents[0], (n.grad.array() * (1.0 - y * y)).matrix());
    });
}

Tensor relu(const Tensor& x) {
    Matrix y = x->value.cwiseMax(0.0);
    return make_op(std::move(y), {x}, [](Node& n) {
        const Matrix mask =
            (n.parents[0]->value.array() > 0.0).cast<double>().matrix();
        accumulate(*n.parents[0], n.grad.cwiseProduct(mask));
    });
}

Tensor softmax_rows(const Tensor& x) {
    if (x->value.hasNaN())
        throw std::invalid_argument("softmax_rows: NaN input");
    Matrix y(x->rows(), x->cols());
    for (Eigen::Index i = 0; i < x->rows(); ++i) {
        Eigen::ArrayXd row = x->value.row(i).array();
        Eigen::ArrayXd e = (row - row.maxCoeff()).exp();
        y.row(i) = (e / e.sum()).matrix().transpose();
    }
    return make_op(std::move(y), {x}, [](Node& n) {
        Matrix dx(n.rows(), n.cols());
        for (Eigen::Index i = 0; i < n.rows(); ++i) {
            const auto y = n.value.row(i).array();
            const auto g = n.grad.row(i).array();
            double dot = (y * g).sum();
            dx.row(i) = (y * (g - dot)).matrix();
        }
        accumulate(*n.parents[0], dx);
    });
}

Tensor layer_norm(const Tensor& x, double eps) {
    if (x->cols() != 1 || x->rows() < 1)
        throw std::invalid_argument("layer_norm: expects a p x 1 vector, p >= 1");
    const Eigen::ArrayXd xv = x->value.col(0).array();
    const double p = static_cast<double>(xv.size());
    const double mean = xv.mean();
    const Eigen::ArrayXd centered = xv - mean;
    const double var = centered.square().mean();   // population variance
    const double inv_std = 1.0 / std::sqrt(var + eps);
    Matrix y = (centered * inv_std).matrix();
    return make_op(std::move(y), {x}, [p, inv_std](Node& n) {
        // dL/dx = inv_std * (g - mean(g) - y * mean(g*y))
        const Eigen::ArrayXd g = n.grad.col(0).array();
        const Eigen::ArrayXd y = n.value.col(0).array();
        const double gm = g.mean();
        const double gym = (g * y).mean();
        accumulate(*n.parents[0],
                   ((g - gm - y * gym) * inv_std).matrix());
        (void)p;
    });
}

Tensor row_l2_norm(const Tensor& x) {
    Matrix y(x->rows(), 1);
    for (Eigen::Index i = 0; i < x->rows(); ++i)
        y(i, 0) = x->value.row(i).norm();
    return make_op(std::move(y), {x}, [](Node& n) {
        Matrix dx = Matrix::Zero(n.parents[0]->rows(), n.parents[0]->cols());
        for (Eigen::Index i = 0; i < n.rows(); ++i) {
            double norm = n.value(i, 0);
            if (norm > 0.0)
                dx.row(i) = n.grad(i, 0) / norm * n.parents[0]->value.row(i);
        }
        accumulate(*n.parents[0], dx);
    });
}

Tensor sum_all(const Tensor& x) {
    Matrix y(1, 1);
    y(0, 0) = x->value.sum();
    return make_op(std::move(y), {x}, [](Node& n) {
        accumulate(*n.parents[0],
                   Matrix::Constant(n.parents[0]->rows(),
                                    n.parents[0]->cols(), n.grad(0, 0)));
    });
}

namespace {

// Iterative post-order DFS; returns nodes with every parent before its child.
std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* parent = node->parents[idx++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace

void backward(const Tensor& root) {
    if (root->rows() != 1 || root->cols() != 1)
        throw std::invalid_argument("backward: root must be scalar (1x1)");
    std::vector<Node*> order = topo_order(root.get());
    for (Node* n : order)
        n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
    root->grad(0, 0) = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_op) n->backward_op(*n);
    }
}

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  const std::vector<Tensor>& leaves, double h) {
    if (h <= 0.0) throw std::invalid_argument("grad_check: h must be positive");
    Tensor out = f(leaves);
    if (out->rows() != 1 || out->cols() != 1)
        throw std::invalid_argument("grad_check: f must be scalar-valued");
    backward(out);
    std::vector<Matrix> analytic;
    analytic.reserve(leaves.size());
    for (const auto& l : leaves) {
        analytic.push_back(l->grad.size() > 0
                               ? l->grad
                               : Matrix::Zero(l->rows(), l->cols()));
    }

    double worst = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        Node& lf = *leaves[li];
        for (Eigen::Index i = 0; i < lf.rows(); ++i) {
            for (Eigen::Index j = 0; j < lf.cols(); ++j) {
                const double orig = lf.value(i, j);
                lf.value(i, j) = orig + h;
                const double fp = f(leaves)->value(0, 0);
                lf.value(i, j) = orig - h;
                const double fm = f(leaves)->value(0, 0);
                lf.value(i, j) = orig;
                const double fd = (fp - fm) / (2.0 * h);
                const double a = analytic[li](i, j);
                const double denom =
                    std::max({std::abs(a), std::abs(fd), 1e-6});
                worst = std::max(worst, std::abs(a - fd) / denom);
            }
        }
    }
    return worst;
}

}  // namespace cmanet::nc
