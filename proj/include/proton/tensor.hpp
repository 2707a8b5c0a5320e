#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace proton {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Raised when operand extents do not line up.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string shape_string(const Shape& shape);
Index shape_size(const Shape& shape);

struct TensorNode {
    Shape shape;
    Vector value;
    Vector grad;  // empty until a backward pass touches the node
    bool requires_grad = false;
    bool recorded = false;  // produced by an op on a tape

    void ensure_grad() {
        if (grad.size() != value.size()) grad = Vector::Zero(value.size());
    }
};

/// Dense row-major fp64 array with shared ownership. Copies alias the same
/// storage; use clone() or detach() for independent data.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, Vector values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor scalar(double v);
    static Tensor from_matrix(const Eigen::Ref<const RowMatrix>& m, bool requires_grad = false);
    static Tensor row_vector(std::span<const double> v);

    const Shape& shape() const { return node_->shape; }
    Index rank() const { return static_cast<Index>(node_->shape.size()); }
    Index size() const { return node_->value.size(); }
    Index dim(Index i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
    /// 2-D view extents; rank-1 tensors are viewed as a single row.
    Index rows() const;
    Index cols() const;

    const Vector& data() const { return node_->value; }
    Vector& data() { return node_->value; }
    const Vector& grad() const { return node_->grad; }
    Vector& grad() { return node_->grad; }
    bool has_grad() const { return node_->grad.size() == node_->value.size(); }

    Eigen::Map<const RowMatrix> mat() const;
    Eigen::Map<RowMatrix> mat();
    Eigen::Map<const RowMatrix> grad_mat() const;

    double item() const;
    double operator()(Index r, Index c) const { return mat()(r, c); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    void zero_grad();

    Tensor detach() const;
    Tensor clone() const;
    Tensor reshape(Shape shape) const;

    const std::shared_ptr<TensorNode>& node() const { return node_; }
    bool same(const Tensor& other) const { return node_ == other.node_; }

private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    friend class Tape;
    friend Tensor make_result(Shape, Vector, std::initializer_list<const Tensor*>);

    std::shared_ptr<TensorNode> node_;
};

/// Append-only record of differentiable operations. Entries are stored in
/// creation order, which is a topological order of the computation.
class Tape {
public:
    using BackwardFn = std::function<void()>;

    void record(const Tensor& output, BackwardFn fn);
    /// Propagates d(loss)/d(node) to every node on the tape. Leaf gradients
    /// accumulate across calls; intermediate gradients are reset first.
    void backward(const Tensor& loss);
    void clear();
    std::size_t size() const { return entries_.size(); }

private:
    struct Entry {
        std::shared_ptr<TensorNode> output;
        BackwardFn fn;
    };
    std::vector<Entry> entries_;
};

/// Makes `tape` the recording target for the current thread.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

Tape* active_tape();

/// Runs backward on the active tape.
void backward(const Tensor& loss);

// Builds an op result; requires_grad is set iff a tape is active and any input needs grad.
Tensor make_result(Shape shape, Vector values, std::initializer_list<const Tensor*> inputs);

// ---------------------------------------------------------------------------
// Differentiable operations. 2-D semantics use the rows()/cols() view.

Tensor matmul(const Tensor& a, const Tensor& b);
/// a · bᵀ
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Elementwise with 2-D broadcasting: an operand may have 1 row or 1 column.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& x);
Tensor logistic(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

/// Softmax over all entries of a vector.
Tensor softmax(const Tensor& x);
/// Row-wise log-softmax of a matrix.
Tensor log_softmax_rows(const Tensor& x);
/// Row-wise softmax restricted to entries where mask != 0; masked entries are 0.
/// A row with no unmasked entry is all zeros.
Tensor masked_softmax_rows(const Tensor& x, const Eigen::Ref<const RowMatrix>& mask);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Column sums of a matrix: [r×c] -> [1×c].
Tensor sum_rows(const Tensor& x);
Tensor mean_rows(const Tensor& x);

/// Σ(aᵢ−bᵢ)² for equal-length tensors; returns a scalar.
Tensor sq_euclid(const Tensor& a, const Tensor& b);
/// Pairwise squared distances between rows: [n×d], [m×d] -> [n×m].
Tensor sq_dist_rows(const Tensor& a, const Tensor& b);
/// Pairwise Euclidean distances [A×B]; coincident rows get a zero gradient.
Tensor dist_rows(const Tensor& a, const Tensor& b);

Tensor row(const Tensor& x, Index r);
/// Gather rows by index; repeated indices accumulate in backward.
Tensor gather_rows(const Tensor& x, std::span<const Index> rows);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& x, Index start, Index count);
/// Entries x(r, cols[r]) for each row r, as [rows×1].
Tensor pick_cols(const Tensor& x, std::span<const Index> cols);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

}  // namespace proton
