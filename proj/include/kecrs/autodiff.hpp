#pragma once

// Minimal reverse-mode differentiation over dense double matrices.
//
// A Tape records every intermediate value together with a closure that
// propagates the output gradient to its inputs. Values are Eigen matrices;
// vectors are 1 x n rows. All arithmetic is 64-bit.

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace kecrs::ad {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Named learnable tensor. `grad` has the shape of `value` and accumulates
/// across backward passes until explicitly zeroed.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    bool trainable = true;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Matrix& value() const;
    /// Gradient after Tape::backward. Empty matrix when nothing flowed here.
    const Matrix& grad() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double scalar() const;

    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, int self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Value that never receives a gradient.
    Var constant(Matrix value);
    /// Leaf that receives a gradient readable through Var::grad().
    Var input(Matrix value);
    /// Leaf bound to a Parameter; backward() adds into `param.grad` (scaled
    /// by the backward seed) unless the parameter is frozen.
    Var param(Parameter& param);

    /// Reverse sweep from a 1x1 root. `seed` multiplies the root gradient,
    /// which lets callers accumulate weighted losses into parameters.
    void backward(const Var& root, double seed = 1.0);

    std::size_t size() const { return nodes_.size(); }

    // Op-author interface.
    Var push(Matrix value, bool requires_grad, Backward backward);
    const Matrix& value(int id) const { return nodes_[id].value; }
    const Matrix& grad(int id) const { return nodes_[id].grad; }
    bool requires_grad(int id) const { return nodes_[id].requires_grad; }
    /// Adds `g` into node `id`'s gradient when that node requires one.
    void accumulate(int id, const Matrix& g);
    template <typename Expr>
    void accumulate_expr(int id, const Expr& g) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        Backward backward;
        Parameter* param = nullptr;
    };
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operations. Shapes are checked eagerly and violations throw ShapeError.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// a (n x c) plus a 1 x c row broadcast over rows.
Var add_row(const Var& a, const Var& row);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var matmul(const Var& a, const Var& b);     // a * b
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
/// Sparse-times-dense. `a` is referenced, not copied: it must outlive backward().
Var spmm(const SparseMatrix& a, const Var& x);

Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var log(const Var& a);
Var square(const Var& a);

/// Row-wise softmax. `mask`, when given, is added to the logits and may hold
/// -infinity to exclude positions; every row must keep one finite entry.
Var softmax_rows(const Var& a, const Matrix* mask = nullptr);
Var log_softmax_rows(const Var& a);

Var gather_rows(const Var& a, std::span<const int> rows);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var repeat_rows(const Var& row, Eigen::Index n);
Var transpose(const Var& a);

Var sum_all(const Var& a);
/// 1 x c vector of column sums (sums over the rows).
Var column_sums(const Var& a);
/// Sum of the entries a(rows[k], cols[k]).
Var sum_entries(const Var& a, std::span<const int> rows, std::span<const int> cols);

/// Per-row layer normalisation with learnable 1 x c gain and bias.
Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

/// Matrix with -infinity strictly above the diagonal, 0 elsewhere.
Matrix causal_mask(Eigen::Index n);

// ---------------------------------------------------------------------------
// ReLU kink monitor used by the finite-difference harness: while active, every
// relu() folds the sign pattern of its input into `signature` and tracks the
// smallest |pre-activation| seen.

struct ReluMonitor {
    bool active = false;
    std::uint64_t signature = 0;
    double min_abs = std::numeric_limits<double>::infinity();

    void reset() {
        signature = 1469598103934665603ULL;
        min_abs = std::numeric_limits<double>::infinity();
    }
};

ReluMonitor& relu_monitor();

/// While active, every softmax_rows() records how far its rows stray from
/// being probability distributions.
struct SoftmaxProbe {
    bool active = false;
    std::size_t rows = 0;
    double max_sum_error = 0.0;
    double min_entry = std::numeric_limits<double>::infinity();

    void reset() {
        rows = 0;
        max_sum_error = 0.0;
        min_entry = std::numeric_limits<double>::infinity();
    }
};

SoftmaxProbe& softmax_probe();

}  // namespace kecrs::ad
