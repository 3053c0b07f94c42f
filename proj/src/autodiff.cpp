#include "kecrs/autodiff.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "kecrs/errors.hpp"

namespace kecrs::ad {

namespace {

std::string shape_of(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

void require(bool ok, const char* op, const Matrix& a, const Matrix& b) {
    if (!ok) {
        throw ShapeError(std::string(op) + ": incompatible shapes " + shape_of(a) + " and " +
                         shape_of(b));
    }
}

Tape& tape_of(const Var& a) {
    if (!a.valid()) throw ShapeError("operation on an empty Var");
    return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
    Tape& t = tape_of(a);
    if (b.tape() != &t) throw ShapeError("operands live on different tapes");
    return t;
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

double Var::scalar() const {
    const Matrix& v = value();
    if (v.rows() != 1 || v.cols() != 1) throw ShapeError("scalar() on " + shape_of(v));
    return v(0, 0);
}

Var Tape::push(Matrix value, bool requires_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::input(Matrix value) { return push(std::move(value), true, nullptr); }

Var Tape::param(Parameter& p) {
    Var v = push(p.value, p.trainable, nullptr);
    nodes_[v.id()].param = &p;
    return v;
}

void Tape::accumulate(int id, const Matrix& g) { accumulate_expr(id, g); }

void Tape::backward(const Var& root, double seed) {
    if (root.tape() != this) throw ShapeError("backward root from another tape");
    Node& r = nodes_[root.id()];
    if (r.value.rows() != 1 || r.value.cols() != 1) {
        throw ShapeError("backward root must be 1x1, got " + shape_of(r.value));
    }
    for (Node& n : nodes_) n.grad.resize(0, 0);
    if (!r.requires_grad) return;
    r.grad = Matrix::Constant(1, 1, seed);
    for (int i = root.id(); i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.grad.size() == 0) continue;
        if (n.backward) n.backward(*this, i);
    }
    for (Node& n : nodes_) {
        if (n.param != nullptr && n.grad.size() != 0) {
            if (n.param->grad.size() == 0) {
                n.param->grad = Matrix::Zero(n.param->value.rows(), n.param->value.cols());
            }
            n.param->grad += n.grad;
        }
    }
}

ReluMonitor& relu_monitor() {
    thread_local ReluMonitor monitor;
    return monitor;
}

SoftmaxProbe& softmax_probe() {
    thread_local SoftmaxProbe probe;
    return probe;
}

// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    Tape& t = tape_of(a, b);
    require(a.rows() == b.rows() && a.cols() == b.cols(), "add", a.value(), b.value());
    const int ia = a.id(), ib = b.id();
    return t.push(a.value() + b.value(), t.requires_grad(ia) || t.requires_grad(ib),
                  [ia, ib](Tape& t, int self) {
                      t.accumulate(ia, t.grad(self));
                      t.accumulate(ib, t.grad(self));
                  });
}

Var sub(const Var& a, const Var& b) {
    Tape& t = tape_of(a, b);
    require(a.rows() == b.rows() && a.cols() == b.cols(), "sub", a.value(), b.value());
    const int ia = a.id(), ib = b.id();
    return t.push(a.value() - b.value(), t.requires_grad(ia) || t.requires_grad(ib),
                  [ia, ib](Tape& t, int self) {
                      t.accumulate(ia, t.grad(self));
                      t.accumulate_expr(ib, -t.grad(self));
                  });
}

Var add_row(const Var& a, const Var& row) {
    Tape& t = tape_of(a, row);
    require(row.rows() == 1 && row.cols() == a.cols(), "add_row", a.value(), row.value());
    const int ia = a.id(), ir = row.id();
    Matrix out = a.value().rowwise() + row.value().row(0);
    return t.push(std::move(out), t.requires_grad(ia) || t.requires_grad(ir),
                  [ia, ir](Tape& t, int self) {
                      t.accumulate(ia, t.grad(self));
                      t.accumulate_expr(ir, t.grad(self).colwise().sum());
                  });
}

Var mul(const Var& a, const Var& b) {
    Tape& t = tape_of(a, b);
    require(a.rows() == b.rows() && a.cols() == b.cols(), "mul", a.value(), b.value());
    const int ia = a.id(), ib = b.id();
    return t.push(a.value().cwiseProduct(b.value()), t.requires_grad(ia) || t.requires_grad(ib),
                  [ia, ib](Tape& t, int self) {
                      const Matrix& g = t.grad(self);
                      t.accumulate_expr(ia, g.cwiseProduct(t.value(ib)));
                      t.accumulate_expr(ib, g.cwiseProduct(t.value(ia)));
                  });
}

Var scale(const Var& a, double s) {
    Tape& t = tape_of(a);
    const int ia = a.id();
    return t.push(a.value() * s, t.requires_grad(ia),
                  [ia, s](Tape& t, int self) { t.accumulate_expr(ia, t.grad(self) * s); });
}

Var add_scalar(const Var& a, double s) {
    Tape& t = tape_of(a);
    const int ia = a.id();
    return t.push(a.value().array() + s, t.requires_grad(ia),
                  [ia](Tape& t, int self) { t.accumulate(ia, t.grad(self)); });
}

Var matmul(const Var& a, const Var& b) {
    Tape& t = tape_of(a, b);
    require(a.cols() == b.rows(), "matmul", a.value(), b.value());
    const int ia = a.id(), ib = b.id();
    Matrix out = a.value() * b.value();
    return t.push(std::move(out), t.requires_grad(ia) || t.requires_grad(ib),
                  [ia, ib](Tape& t, int self) {
                      const Matrix& g = t.grad(self);
                      if (t.requires_grad(ia)) t.accumulate_expr(ia, g * t.value(ib).transpose());
                      if (t.requires_grad(ib)) t.accumulate_expr(ib, t.value(ia).transpose() * g);
                  });
}

Var matmul_nt(const Var& a, const Var& b) {
    Tape& t = tape_of(a, b);
    require(a.cols() == b.cols(), "matmul_nt", a.value(), b.value());
    const int ia = a.id(), ib = b.id();
    Matrix out = a.value() * b.value().transpose();
    return t.push(std::move(out), t.requires_grad(ia) || t.requires_grad(ib),
                  [ia, ib](Tape& t, int self) {
                      const Matrix& g = t.grad(self);
                      if (t.requires_grad(ia)) t.accumulate_expr(ia, g * t.value(ib));
                      if (t.requires_grad(ib)) t.accumulate_expr(ib, g.transpose() * t.value(ia));
                  });
}

Var spmm(const SparseMatrix& a, const Var& x) {
    Tape& t = tape_of(x);
    if (a.cols() != x.rows()) {
        throw ShapeError("spmm: sparse " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " times " + shape_of(x.value()));
    }
    const int ix = x.id();
    Matrix out = a * x.value();
    const SparseMatrix* ap = &a;
    return t.push(std::move(out), t.requires_grad(ix), [ix, ap](Tape& t, int self) {
        t.accumulate_expr(ix, ap->transpose() * t.grad(self));
    });
}

Var relu(const Var& a) {
    Tape& t = tape_of(a);
    const int ia = a.id();
    const Matrix& x = a.value();
    ReluMonitor& mon = relu_monitor();
    if (mon.active) {
        for (Eigen::Index k = 0; k < x.size(); ++k) {
            const double v = x.data()[k];
            mon.signature = (mon.signature ^ (v > 0.0 ? 0x9dULL : 0x3bULL)) * 1099511628211ULL;
            mon.min_abs = std::min(mon.min_abs, std::abs(v));
        }
    }
    Matrix out = x.cwiseMax(0.0);
    return t.push(std::move(out), t.requires_grad(ia), [ia](Tape& t, int self) {
        const Matrix& x = t.value(ia);
        t.accumulate_expr(ia, (x.array() > 0.0).select(t.grad(self), 0.0));
    });
}

Var tanh(const Var& a) {
    Tape& t = tape_of(a);
    const int ia = a.id();
    Matrix out = a.value().array().tanh();
    return t.push(std::move(out), t.requires_grad(ia), [ia](Tape& t, int self) {
        const Matrix& y = t.value(self);
        t.accumulate_expr(ia, t.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
    });
}

Var sigmoid(const Var& a) {
    Tape& t = tape_of(a);
    const int ia = a.id();
    Matrix out = a.value().unaryExpr([](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
    });
    return t.push(std::move(out), t.requires_grad(ia), [ia](Tape& t, int self) {
        const Matrix& y = t.value(self);
        t.accumulate_expr(ia,
                          t.grad(self).cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
    });
}

Var log(const Var& a) {
    Tape& t = tape_of(a);
    const int ia = a.id();
    Matrix out = a.value().array().log();
    return t.push(std::move(out), t.requires_grad(ia), [ia](Tape& t, int self) {
        t.accumulate_expr(ia, t.grad(self).cwiseQuotient(t.value(ia)));
    });
}

Var square(const Var& a) {
    Tape& t = tape_of(a);
    const int ia = a.id();
    Matrix out = a.value().array().square();
    return t.push(std::move(out), t.requires_grad(ia), [ia](Tape& t, int self) {
        t.accumulate_expr(ia, 2.0 * t.grad(self).cwiseProduct(t.value(ia)));
    });
}

namespace {

// Max of a logit row. NaN or +inf means the model has diverged; a row of
// -inf is a fully masked row.
double row_max(const Eigen::Ref<const RowVector>& row, const char* op) {
    if (row.hasNaN() || (row.array() == std::numeric_limits<double>::infinity()).any()) {
        throw NumericalError(std::string(op) + ": non-finite logit");
    }
    const double m = row.maxCoeff();
    if (!std::isfinite(m)) throw ShapeError(std::string(op) + ": row without a finite logit");
    return m;
}

}  // namespace

Var softmax_rows(const Var& a, const Matrix* mask) {
    Tape& t = tape_of(a);
    const int ia = a.id();
    Matrix z = a.value();
    if (mask != nullptr) {
        require(mask->rows() == z.rows() && mask->cols() == z.cols(), "softmax mask", z, *mask);
        z += *mask;
    }
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const double m = row_max(z.row(r), "softmax_rows");
        z.row(r) = (z.row(r).array() - m).exp();
        z.row(r) /= z.row(r).sum();
    }
    if (SoftmaxProbe& probe = softmax_probe(); probe.active) {
        for (Eigen::Index r = 0; r < z.rows(); ++r) {
            probe.max_sum_error = std::max(probe.max_sum_error, std::abs(z.row(r).sum() - 1.0));
            probe.min_entry = std::min(probe.min_entry, z.row(r).minCoeff());
        }
        probe.rows += static_cast<std::size_t>(z.rows());
    }
    return t.push(std::move(z), t.requires_grad(ia), [ia](Tape& t, int self) {
        const Matrix& y = t.value(self);
        const Matrix& g = t.grad(self);
        const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
        Matrix dx = y.cwiseProduct(g - dots.replicate(1, g.cols()));
        t.accumulate(ia, dx);
    });
}

Var log_softmax_rows(const Var& a) {
    Tape& t = tape_of(a);
    const int ia = a.id();
    Matrix z = a.value();
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const double m = row_max(z.row(r), "log_softmax_rows");
        const double lse = m + std::log((z.row(r).array() - m).exp().sum());
        z.row(r).array() -= lse;
    }
    return t.push(std::move(z), t.requires_grad(ia), [ia](Tape& t, int self) {
        const Matrix& y = t.value(self);
        const Matrix& g = t.grad(self);
        const Eigen::VectorXd sums = g.rowwise().sum();
        Matrix dx = g - (y.array().exp().matrix().array().colwise() * sums.array()).matrix();
        t.accumulate(ia, dx);
    });
}

Var gather_rows(const Var& a, std::span<const int> rows) {
    Tape& t = tape_of(a);
    const int ia = a.id();
    const Matrix& src = a.value();
    Matrix out(static_cast<Eigen::Index>(rows.size()), src.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] < 0 || rows[k] >= src.rows()) {
            throw ShapeError("gather_rows: row " + std::to_string(rows[k]) + " out of range for " +
                             shape_of(src));
        }
        out.row(static_cast<Eigen::Index>(k)) = src.row(rows[k]);
    }
    std::vector<int> idx(rows.begin(), rows.end());
    return t.push(std::move(out), t.requires_grad(ia),
                  [ia, idx = std::move(idx)](Tape& t, int self) {
                      const Matrix& g = t.grad(self);
                      Matrix dx = Matrix::Zero(t.value(ia).rows(), t.value(ia).cols());
                      for (std::size_t k = 0; k < idx.size(); ++k) {
                          dx.row(idx[k]) += g.row(static_cast<Eigen::Index>(k));
                      }
                      t.accumulate(ia, dx);
                  });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    Tape& t = tape_of(parts[0]);
    const Eigen::Index rows = parts[0].rows();
    Eigen::Index cols = 0;
    bool needs = false;
    for (const Var& p : parts) {
        if (p.tape() != &t) throw ShapeError("concat_cols: operands on different tapes");
        require(p.rows() == rows, "concat_cols", parts[0].value(), p.value());
        cols += p.cols();
        needs = needs || t.requires_grad(p.id());
    }
    Matrix out(rows, cols);
    std::vector<std::pair<int, Eigen::Index>> spans;
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        spans.emplace_back(p.id(), at);
        at += p.cols();
    }
    return t.push(std::move(out), needs, [spans = std::move(spans)](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        for (const auto& [id, start] : spans) {
            if (t.requires_grad(id)) t.accumulate_expr(id, g.middleCols(start, t.value(id).cols()));
        }
    });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
    Tape& t = tape_of(a);
    if (start < 0 || count < 0 || start + count > a.cols()) {
        throw ShapeError("slice_cols: range out of bounds for " + shape_of(a.value()));
    }
    const int ia = a.id();
    Matrix out = a.value().middleCols(start, count);
    return t.push(std::move(out), t.requires_grad(ia), [ia, start, count](Tape& t, int self) {
        Matrix dx = Matrix::Zero(t.value(ia).rows(), t.value(ia).cols());
        dx.middleCols(start, count) = t.grad(self);
        t.accumulate(ia, dx);
    });
}

Var repeat_rows(const Var& row, Eigen::Index n) {
    Tape& t = tape_of(row);
    if (row.rows() != 1) throw ShapeError("repeat_rows: expected a row, got " + shape_of(row.value()));
    const int ir = row.id();
    Matrix out = row.value().replicate(n, 1);
    return t.push(std::move(out), t.requires_grad(ir), [ir](Tape& t, int self) {
        t.accumulate_expr(ir, t.grad(self).colwise().sum());
    });
}

Var transpose(const Var& a) {
    Tape& t = tape_of(a);
    const int ia = a.id();
    Matrix out = a.value().transpose();
    return t.push(std::move(out), t.requires_grad(ia),
                  [ia](Tape& t, int self) { t.accumulate_expr(ia, t.grad(self).transpose()); });
}

Var sum_all(const Var& a) {
    Tape& t = tape_of(a);
    const int ia = a.id();
    Matrix out = Matrix::Constant(1, 1, a.value().sum());
    return t.push(std::move(out), t.requires_grad(ia), [ia](Tape& t, int self) {
        const double g = t.grad(self)(0, 0);
        t.accumulate_expr(ia, Matrix::Constant(t.value(ia).rows(), t.value(ia).cols(), g));
    });
}

Var column_sums(const Var& a) {
    Tape& t = tape_of(a);
    const int ia = a.id();
    Matrix out = a.value().colwise().sum();
    return t.push(std::move(out), t.requires_grad(ia), [ia](Tape& t, int self) {
        t.accumulate_expr(ia, t.grad(self).replicate(t.value(ia).rows(), 1));
    });
}

Var sum_entries(const Var& a, std::span<const int> rows, std::span<const int> cols) {
    Tape& t = tape_of(a);
    if (rows.size() != cols.size()) throw ShapeError("sum_entries: index lists differ in length");
    const Matrix& v = a.value();
    double s = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] < 0 || rows[k] >= v.rows() || cols[k] < 0 || cols[k] >= v.cols()) {
            throw ShapeError("sum_entries: index out of range for " + shape_of(v));
        }
        s += v(rows[k], cols[k]);
    }
    const int ia = a.id();
    std::vector<int> r(rows.begin(), rows.end()), c(cols.begin(), cols.end());
    return t.push(Matrix::Constant(1, 1, s), t.requires_grad(ia),
                  [ia, r = std::move(r), c = std::move(c)](Tape& t, int self) {
                      const double g = t.grad(self)(0, 0);
                      Matrix dx = Matrix::Zero(t.value(ia).rows(), t.value(ia).cols());
                      for (std::size_t k = 0; k < r.size(); ++k) dx(r[k], c[k]) += g;
                      t.accumulate(ia, dx);
                  });
}

Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps) {
    Tape& t = tape_of(x, gain);
    if (bias.tape() != &t) throw ShapeError("layer_norm_rows: operands on different tapes");
    require(gain.rows() == 1 && gain.cols() == x.cols(), "layer_norm gain", x.value(), gain.value());
    require(bias.rows() == 1 && bias.cols() == x.cols(), "layer_norm bias", x.value(), bias.value());
    const Matrix& xv = x.value();
    const Eigen::Index n = xv.cols();
    Matrix xhat(xv.rows(), n);
    Eigen::VectorXd inv_std(xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        const double mu = xv.row(r).mean();
        const double var = (xv.row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
    }
    Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
    out.rowwise() += bias.value().row(0);
    const int ix = x.id(), ig = gain.id(), ib = bias.id();
    const bool needs = t.requires_grad(ix) || t.requires_grad(ig) || t.requires_grad(ib);
    return t.push(std::move(out), needs,
                  [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t,
                                                                                      int self) {
                      const Matrix& g = t.grad(self);
                      if (t.requires_grad(ig)) {
                          t.accumulate_expr(ig, g.cwiseProduct(xhat).colwise().sum());
                      }
                      if (t.requires_grad(ib)) t.accumulate_expr(ib, g.colwise().sum());
                      if (t.requires_grad(ix)) {
                          const double n = static_cast<double>(g.cols());
                          Matrix dxhat = (g.array().rowwise() * t.value(ig).row(0).array()).matrix();
                          Matrix dx(g.rows(), g.cols());
                          for (Eigen::Index r = 0; r < g.rows(); ++r) {
                              const double s1 = dxhat.row(r).sum();
                              const double s2 = dxhat.row(r).dot(xhat.row(r));
                              dx.row(r) = (inv_std(r) / n) *
                                          (n * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2);
                          }
                          t.accumulate(ix, dx);
                      }
                  });
}

Matrix causal_mask(Eigen::Index n) {
    Matrix m = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = -std::numeric_limits<double>::infinity();
    }
    return m;
}

}  // namespace kecrs::ad
