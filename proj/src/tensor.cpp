#include "proton/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace proton {

namespace {

thread_local Tape* g_active_tape = nullptr;

Shape matrix_shape(Index r, Index c) { return {r, c}; }

RowMatrix expand(const Tensor& t, Index rows, Index cols) {
    auto m = t.mat();
    if (m.rows() == rows && m.cols() == cols) return m;
    return m.replicate(rows / m.rows(), cols / m.cols());
}

// Sums a broadcast gradient back down to the operand's extents.
RowMatrix reduce_to(const RowMatrix& g, Index rows, Index cols) {
    if (g.rows() == rows && g.cols() == cols) return g;
    if (rows == 1 && cols == 1) return RowMatrix::Constant(1, 1, g.sum());
    if (rows == 1) return g.colwise().sum();
    return g.rowwise().sum();
}

void accumulate(const Tensor& t, const Eigen::Ref<const RowMatrix>& g) {
    if (!t.requires_grad()) return;
    auto& node = *t.node();
    node.ensure_grad();
    Eigen::Map<RowMatrix>(node.grad.data(), g.rows(), g.cols()) += g;
}

void accumulate_flat(const Tensor& t, const Vector& g) {
    if (!t.requires_grad()) return;
    auto& node = *t.node();
    node.ensure_grad();
    node.grad += g;
}

// Gradient of the op output; zero when the output was never reached.
RowMatrix out_grad(const std::shared_ptr<TensorNode>& out, Index rows, Index cols) {
    if (out->grad.size() != out->value.size()) return RowMatrix::Zero(rows, cols);
    return Eigen::Map<const RowMatrix>(out->grad.data(), rows, cols);
}

Vector out_grad_flat(const std::shared_ptr<TensorNode>& out) {
    if (out->grad.size() != out->value.size()) return Vector::Zero(out->value.size());
    return out->grad;
}

Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return a.shape();
    const Index r = std::max(a.rows(), b.rows());
    const Index c = std::max(a.cols(), b.cols());
    auto ok = [&](const Tensor& t) {
        return (t.rows() == r || t.rows() == 1) && (t.cols() == c || t.cols() == 1);
    };
    if (!ok(a) || !ok(b)) {
        throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(a.shape()) +
                             " with " + shape_string(b.shape()));
    }
    return matrix_shape(r, c);
}

template <typename Fn>
Tensor unary_elementwise(const Tensor& x, Vector value, Fn local_grad) {
    Tensor out = make_result(x.shape(), std::move(value), {&x});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [x, o, local_grad] {
            accumulate_flat(x, out_grad_flat(o).cwiseProduct(local_grad(x.data(), o->value)));
        });
    }
    return out;
}

}  // namespace

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Index shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : Tensor(Shape{1}, Vector::Zero(1)) {}

Tensor::Tensor(Shape shape, Vector values, bool requires_grad)
    : node_(std::make_shared<TensorNode>()) {
    for (Index e : shape) {
        if (e <= 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape));
    }
    if (shape_size(shape) != values.size()) {
        throw DimensionError("shape " + shape_string(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const Index n = shape_size(shape);
    return Tensor(std::move(shape), Vector::Zero(n), requires_grad);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, Vector::Constant(1, v)); }

Tensor Tensor::from_matrix(const Eigen::Ref<const RowMatrix>& m, bool requires_grad) {
    Vector v(m.size());
    Eigen::Map<RowMatrix>(v.data(), m.rows(), m.cols()) = m;
    return Tensor(matrix_shape(m.rows(), m.cols()), std::move(v), requires_grad);
}

Tensor Tensor::row_vector(std::span<const double> v) {
    Vector values = Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
    return Tensor(Shape{static_cast<Index>(v.size())}, std::move(values));
}

Index Tensor::rows() const {
    const auto& s = node_->shape;
    if (s.size() == 1) return 1;
    if (s.size() == 2) return s[0];
    throw DimensionError("2-D view of rank-" + std::to_string(s.size()) + " tensor " + shape_string(s));
}

Index Tensor::cols() const {
    const auto& s = node_->shape;
    if (s.size() == 1) return s[0];
    if (s.size() == 2) return s[1];
    throw DimensionError("2-D view of rank-" + std::to_string(s.size()) + " tensor " + shape_string(s));
}

Eigen::Map<const RowMatrix> Tensor::mat() const {
    return Eigen::Map<const RowMatrix>(node_->value.data(), rows(), cols());
}

Eigen::Map<RowMatrix> Tensor::mat() { return Eigen::Map<RowMatrix>(node_->value.data(), rows(), cols()); }

Eigen::Map<const RowMatrix> Tensor::grad_mat() const {
    if (!has_grad()) throw std::logic_error("tensor has no gradient");
    return Eigen::Map<const RowMatrix>(node_->grad.data(), rows(), cols());
}

double Tensor::item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
}

void Tensor::zero_grad() {
    if (node_->grad.size()) node_->grad.setZero();
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value); }

Tensor Tensor::clone() const { return Tensor(node_->shape, node_->value, node_->requires_grad); }

Tensor Tensor::reshape(Shape shape) const {
    if (shape_size(shape) != size()) {
        throw DimensionError("reshape " + shape_string(this->shape()) + " -> " + shape_string(shape));
    }
    Tensor out = make_result(std::move(shape), node_->value, {this});
    if (out.requires_grad()) {
        auto self = *this;
        auto o = out.node();
        active_tape()->record(out, [self, o] { accumulate_flat(self, out_grad_flat(o)); });
    }
    return out;
}

Tensor make_result(Shape shape, Vector values, std::initializer_list<const Tensor*> inputs) {
#ifndef NDEBUG
    bool finite_inputs = true;
    for (const Tensor* t : inputs) finite_inputs = finite_inputs && t->data().allFinite();
    if (finite_inputs && !values.allFinite()) throw std::domain_error("non-finite op output");
#endif
    Tensor out(std::move(shape), std::move(values));
    if (active_tape() != nullptr) {
        for (const Tensor* t : inputs) {
            if (t->requires_grad()) {
                out.node_->requires_grad = true;
                break;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tape

void Tape::record(const Tensor& output, BackwardFn fn) {
    output.node()->recorded = true;
    entries_.push_back({output.node(), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) throw DimensionError("backward needs a scalar loss, got " + shape_string(loss.shape()));
    for (auto& e : entries_) {
        if (e.output->grad.size()) e.output->grad.setZero();
    }
    auto& node = *loss.node();
    if (!node.requires_grad) return;
    node.ensure_grad();
    node.grad[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->output->grad.size()) it->fn();
    }
}

void Tape::clear() { entries_.clear(); }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss) {
    if (active_tape() == nullptr) throw std::logic_error("backward without an active tape");
    active_tape()->backward(loss);
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " · " +
                             shape_string(b.shape()));
    }
    RowMatrix r = a.mat() * b.mat();
    Tensor out = make_result(matrix_shape(r.rows(), r.cols()), Eigen::Map<Vector>(r.data(), r.size()), {&a, &b});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [a, b, o] {
            RowMatrix g = out_grad(o, a.rows(), b.cols());
            if (a.requires_grad()) accumulate(a, g * b.mat().transpose());
            if (b.requires_grad()) accumulate(b, a.mat().transpose() * g);
        });
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: inner dimensions differ, " + shape_string(a.shape()) + " · " +
                             shape_string(b.shape()) + "ᵀ");
    }
    RowMatrix r = a.mat() * b.mat().transpose();
    Tensor out = make_result(matrix_shape(r.rows(), r.cols()), Eigen::Map<Vector>(r.data(), r.size()), {&a, &b});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [a, b, o] {
            RowMatrix g = out_grad(o, a.rows(), b.rows());
            if (a.requires_grad()) accumulate(a, g * b.mat());
            if (b.requires_grad()) accumulate(b, g.transpose() * a.mat());
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    RowMatrix r = a.mat().transpose();
    Tensor out = make_result(matrix_shape(r.rows(), r.cols()), Eigen::Map<Vector>(r.data(), r.size()), {&a});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [a, o] { accumulate(a, out_grad(o, a.cols(), a.rows()).transpose()); });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    Shape shape = broadcast_shape(a, b, "add");
    const bool same = a.shape() == b.shape();
    Vector v;
    if (same) {
        v = a.data() + b.data();
    } else {
        const Index r = std::max(a.rows(), b.rows()), c = std::max(a.cols(), b.cols());
        RowMatrix m = expand(a, r, c) + expand(b, r, c);
        v = Eigen::Map<Vector>(m.data(), m.size());
    }
    Tensor out = make_result(shape, std::move(v), {&a, &b});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [a, b, o, same] {
            if (same) {
                Vector g = out_grad_flat(o);
                accumulate_flat(a, g);
                accumulate_flat(b, g);
                return;
            }
            const Index r = std::max(a.rows(), b.rows()), c = std::max(a.cols(), b.cols());
            RowMatrix g = out_grad(o, r, c);
            accumulate(a, reduce_to(g, a.rows(), a.cols()));
            accumulate(b, reduce_to(g, b.rows(), b.cols()));
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    Shape shape = broadcast_shape(a, b, "sub");
    const bool same = a.shape() == b.shape();
    Vector v;
    if (same) {
        v = a.data() - b.data();
    } else {
        const Index r = std::max(a.rows(), b.rows()), c = std::max(a.cols(), b.cols());
        RowMatrix m = expand(a, r, c) - expand(b, r, c);
        v = Eigen::Map<Vector>(m.data(), m.size());
    }
    Tensor out = make_result(shape, std::move(v), {&a, &b});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [a, b, o, same] {
            if (same) {
                Vector g = out_grad_flat(o);
                accumulate_flat(a, g);
                accumulate_flat(b, -g);
                return;
            }
            const Index r = std::max(a.rows(), b.rows()), c = std::max(a.cols(), b.cols());
            RowMatrix g = out_grad(o, r, c);
            accumulate(a, reduce_to(g, a.rows(), a.cols()));
            accumulate(b, -reduce_to(g, b.rows(), b.cols()));
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    Shape shape = broadcast_shape(a, b, "mul");
    const Index r = std::max(a.rows(), b.rows()), c = std::max(a.cols(), b.cols());
    RowMatrix m = expand(a, r, c).cwiseProduct(expand(b, r, c));
    Tensor out = make_result(shape, Eigen::Map<Vector>(m.data(), m.size()), {&a, &b});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [a, b, o, r, c] {
            RowMatrix g = out_grad(o, r, c);
            if (a.requires_grad()) accumulate(a, reduce_to(g.cwiseProduct(expand(b, r, c)), a.rows(), a.cols()));
            if (b.requires_grad()) accumulate(b, reduce_to(g.cwiseProduct(expand(a, r, c)), b.rows(), b.cols()));
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = make_result(a.shape(), a.data() * s, {&a});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [a, o, s] { accumulate_flat(a, out_grad_flat(o) * s); });
    }
    return out;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& x) {
    Vector v = x.data().cwiseMax(0.0);
    return unary_elementwise(x, std::move(v), [](const Vector& in, const Vector&) {
        return Vector((in.array() > 0.0).cast<double>());
    });
}

Tensor logistic(const Tensor& x) {
    Vector v = x.data().unaryExpr([](double t) {
        // Branches keep exp() from overflowing for large |t|.
        if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
        const double e = std::exp(t);
        return e / (1.0 + e);
    });
    return unary_elementwise(x, std::move(v), [](const Vector&, const Vector& s) {
        return Vector(s.array() * (1.0 - s.array()));
    });
}

Tensor exp(const Tensor& x) {
    Vector v = x.data().array().exp();
    return unary_elementwise(x, std::move(v), [](const Vector&, const Vector& e) { return e; });
}

Tensor log(const Tensor& x) {
    Vector v = x.data().array().log();
    return unary_elementwise(x, std::move(v), [](const Vector& in, const Vector&) {
        return Vector(in.array().inverse());
    });
}

// ---------------------------------------------------------------------------
// Normalizations

Tensor softmax(const Tensor& x) {
    const double m = x.data().maxCoeff();
    Vector e = (x.data().array() - m).exp();
    e /= e.sum();
    Tensor out = make_result(x.shape(), e, {&x});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [x, o] {
            const Vector& s = o->value;
            Vector g = out_grad_flat(o);
            accumulate_flat(x, (s.array() * (g.array() - g.dot(s))).matrix().eval());
        });
    }
    return out;
}

Tensor log_softmax_rows(const Tensor& x) {
    auto m = x.mat();
    RowMatrix r(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) {
        const double mx = m.row(i).maxCoeff();
        const double lse = mx + std::log((m.row(i).array() - mx).exp().sum());
        r.row(i) = m.row(i).array() - lse;
    }
    Tensor out = make_result(x.shape(), Eigen::Map<Vector>(r.data(), r.size()), {&x});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [x, o] {
            const Index rows = x.rows(), cols = x.cols();
            RowMatrix g = out_grad(o, rows, cols);
            Eigen::Map<const RowMatrix> ls(o->value.data(), rows, cols);
            RowMatrix p = ls.array().exp();
            RowMatrix dx = g - (p.array().colwise() * g.rowwise().sum().array()).matrix();
            accumulate(x, dx);
        });
    }
    return out;
}

Tensor masked_softmax_rows(const Tensor& x, const Eigen::Ref<const RowMatrix>& mask) {
    auto m = x.mat();
    if (mask.rows() != m.rows() || mask.cols() != m.cols()) {
        throw DimensionError("masked_softmax_rows: mask does not match " + shape_string(x.shape()));
    }
    RowMatrix r = RowMatrix::Zero(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Index j = 0; j < m.cols(); ++j) {
            if (mask(i, j) != 0.0) mx = std::max(mx, m(i, j));
        }
        if (!std::isfinite(mx)) continue;  // no neighbours: row stays zero
        double total = 0.0;
        for (Index j = 0; j < m.cols(); ++j) {
            if (mask(i, j) != 0.0) {
                r(i, j) = std::exp(m(i, j) - mx);
                total += r(i, j);
            }
        }
        r.row(i) /= total;
    }
    Tensor out = make_result(x.shape(), Eigen::Map<Vector>(r.data(), r.size()), {&x});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [x, o] {
            const Index rows = x.rows(), cols = x.cols();
            RowMatrix g = out_grad(o, rows, cols);
            Eigen::Map<const RowMatrix> s(o->value.data(), rows, cols);
            Eigen::VectorXd dots = (g.cwiseProduct(s)).rowwise().sum();
            RowMatrix dx = s.array() * (g.array().colwise() - dots.array());
            accumulate(x, dx);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
    Tensor out = make_result(Shape{1}, Vector::Constant(1, x.data().sum()), {&x});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [x, o] {
            accumulate_flat(x, Vector::Constant(x.size(), out_grad_flat(o)[0]));
        });
    }
    return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor sum_rows(const Tensor& x) {
    RowMatrix r = x.mat().colwise().sum();
    Tensor out = make_result(matrix_shape(1, r.cols()), Eigen::Map<Vector>(r.data(), r.size()), {&x});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [x, o] {
            RowMatrix g = out_grad(o, 1, x.cols());
            accumulate(x, g.replicate(x.rows(), 1));
        });
    }
    return out;
}

Tensor mean_rows(const Tensor& x) { return scale(sum_rows(x), 1.0 / static_cast<double>(x.rows())); }

Tensor sq_euclid(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) {
        throw DimensionError("sq_euclid: length mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
    Vector diff = a.data() - b.data();
    Tensor out = make_result(Shape{1}, Vector::Constant(1, diff.squaredNorm()), {&a, &b});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [a, b, o, diff] {
            const double g = out_grad_flat(o)[0];
            accumulate_flat(a, 2.0 * g * diff);
            accumulate_flat(b, -2.0 * g * diff);
        });
    }
    return out;
}

Tensor sq_dist_rows(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("sq_dist_rows: width mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
    auto am = a.mat();
    auto bm = b.mat();
    RowMatrix r(am.rows(), bm.rows());
    for (Index i = 0; i < am.rows(); ++i) {
        for (Index j = 0; j < bm.rows(); ++j) r(i, j) = (am.row(i) - bm.row(j)).squaredNorm();
    }
    Tensor out = make_result(matrix_shape(r.rows(), r.cols()), Eigen::Map<Vector>(r.data(), r.size()), {&a, &b});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [a, b, o] {
            auto am = a.mat();
            auto bm = b.mat();
            RowMatrix g = out_grad(o, am.rows(), bm.rows());
            // d/da_i = 2 Σ_j g_ij (a_i − b_j); d/db_j = −2 Σ_i g_ij (a_i − b_j)
            if (a.requires_grad()) {
                RowMatrix da = 2.0 * (g.rowwise().sum().asDiagonal() * am - g * bm);
                accumulate(a, da);
            }
            if (b.requires_grad()) {
                RowMatrix db = 2.0 * (g.colwise().sum().transpose().asDiagonal() * bm - g.transpose() * am);
                accumulate(b, db);
            }
        });
    }
    return out;
}

Tensor dist_rows(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("dist_rows: width mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    auto am = a.mat();
    auto bm = b.mat();
    RowMatrix r(am.rows(), bm.rows());
    for (Index i = 0; i < am.rows(); ++i) {
        for (Index j = 0; j < bm.rows(); ++j) r(i, j) = (am.row(i) - bm.row(j)).norm();
    }
    Tensor out = make_result(matrix_shape(r.rows(), r.cols()), Eigen::Map<Vector>(r.data(), r.size()), {&a, &b});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [a, b, o, r] {
            auto am = a.mat();
            auto bm = b.mat();
            // g_ij / d_ij, with the zero-distance subgradient taken as 0
            RowMatrix w = out_grad(o, am.rows(), bm.rows());
            for (Index k = 0; k < w.size(); ++k) w.data()[k] = r.data()[k] > 0 ? w.data()[k] / r.data()[k] : 0.0;
            if (a.requires_grad()) accumulate(a, RowMatrix(w.rowwise().sum().asDiagonal() * am - w * bm));
            if (b.requires_grad()) {
                accumulate(b, RowMatrix(w.colwise().sum().transpose().asDiagonal() * bm - w.transpose() * am));
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Indexing

Tensor row(const Tensor& x, Index r) {
    const Index idx[1] = {r};
    return gather_rows(x, idx).reshape(Shape{x.cols()});
}

Tensor gather_rows(const Tensor& x, std::span<const Index> rows) {
    auto m = x.mat();
    RowMatrix r(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= m.rows()) {
            throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " outside " +
                                 shape_string(x.shape()));
        }
        r.row(static_cast<Index>(i)) = m.row(rows[i]);
    }
    Tensor out = make_result(matrix_shape(r.rows(), r.cols()), Eigen::Map<Vector>(r.data(), r.size()), {&x});
    if (out.requires_grad()) {
        auto o = out.node();
        std::vector<Index> idx(rows.begin(), rows.end());
        active_tape()->record(out, [x, o, idx] {
            RowMatrix g = out_grad(o, static_cast<Index>(idx.size()), x.cols());
            RowMatrix dx = RowMatrix::Zero(x.rows(), x.cols());
            for (std::size_t i = 0; i < idx.size(); ++i) dx.row(idx[i]) += g.row(static_cast<Index>(i));
            accumulate(x, dx);
        });
    }
    return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const Index cols = parts.front().cols();
    Index rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) {
            throw DimensionError("concat_rows: width mismatch " + shape_string(parts.front().shape()) + " vs " +
                                 shape_string(p.shape()));
        }
        rows += p.rows();
    }
    RowMatrix r(rows, cols);
    Index at = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        r.middleRows(at, p.rows()) = p.mat();
        at += p.rows();
        any_grad = any_grad || p.requires_grad();
    }
    Tensor out(matrix_shape(rows, cols), Eigen::Map<Vector>(r.data(), r.size()));
    if (active_tape() && any_grad) {
        out.set_requires_grad(true);
        auto o = out.node();
        std::vector<Tensor> inputs(parts.begin(), parts.end());
        active_tape()->record(out, [inputs, o, rows, cols] {
            RowMatrix g = out_grad(o, rows, cols);
            Index at = 0;
            for (const auto& p : inputs) {
                if (p.requires_grad()) accumulate(p, g.middleRows(at, p.rows()));
                at += p.rows();
            }
        });
    }
    return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("concat_cols: row mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
    RowMatrix r(a.rows(), a.cols() + b.cols());
    r << a.mat(), b.mat();
    Tensor out = make_result(matrix_shape(r.rows(), r.cols()), Eigen::Map<Vector>(r.data(), r.size()), {&a, &b});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [a, b, o] {
            RowMatrix g = out_grad(o, a.rows(), a.cols() + b.cols());
            accumulate(a, g.leftCols(a.cols()));
            accumulate(b, g.rightCols(b.cols()));
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& x, Index start, Index count) {
    if (start < 0 || count < 1 || start + count > x.cols()) {
        throw DimensionError("slice_cols: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                             ") outside " + shape_string(x.shape()));
    }
    RowMatrix r = x.mat().middleCols(start, count);
    Tensor out = make_result(matrix_shape(r.rows(), r.cols()), Eigen::Map<Vector>(r.data(), r.size()), {&x});
    if (out.requires_grad()) {
        auto o = out.node();
        active_tape()->record(out, [x, o, start, count] {
            RowMatrix dx = RowMatrix::Zero(x.rows(), x.cols());
            dx.middleCols(start, count) = out_grad(o, x.rows(), count);
            accumulate(x, dx);
        });
    }
    return out;
}

Tensor pick_cols(const Tensor& x, std::span<const Index> cols) {
    auto m = x.mat();
    if (static_cast<Index>(cols.size()) != m.rows()) {
        throw DimensionError("pick_cols: need one column per row of " + shape_string(x.shape()));
    }
    Vector v(m.rows());
    for (Index i = 0; i < m.rows(); ++i) {
        if (cols[i] < 0 || cols[i] >= m.cols()) throw DimensionError("pick_cols: column out of range");
        v[i] = m(i, cols[i]);
    }
    Tensor out = make_result(matrix_shape(m.rows(), 1), std::move(v), {&x});
    if (out.requires_grad()) {
        auto o = out.node();
        std::vector<Index> idx(cols.begin(), cols.end());
        active_tape()->record(out, [x, o, idx] {
            Vector g = out_grad_flat(o);
            RowMatrix dx = RowMatrix::Zero(x.rows(), x.cols());
            for (std::size_t i = 0; i < idx.size(); ++i) dx(static_cast<Index>(i), idx[i]) = g[static_cast<Index>(i)];
            accumulate(x, dx);
        });
    }
    return out;
}

}  // namespace proton
