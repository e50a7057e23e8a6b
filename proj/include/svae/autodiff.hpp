#pragma once

// Tape-based reverse/forward mode autodiff over dense f64 matrices.
//
// Every node stores its value; inputs always precede the node. Var is a
// (tape, index) handle and carries the same free-function op set as Mat
// (tensor_ops.hpp), so numeric templates instantiate for both.

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "svae/tensor_ops.hpp"

namespace svae::ad {

enum class Op : unsigned char {
    Leaf, Const,
    Add, Sub, Neg, Mul, Scale, MulScalar, MatMul, Transpose,
    SolveSpd, LogDetSpd, Cholesky, SolveLowerT,
    Exp, Log, Softplus, Tanh, Gelu, Sqrt, Recip, Digamma, Lgamma,
    LogSumExp, Sum, Slice, VCat, HCat, Reshape, BcastRows, BcastCols, Diag, DiagPart,
    StopGradient, Custom
};

const char* op_name(Op op);

// Single-input node with user-supplied forward and derivative rules.
struct CustomFn {
    enum class Policy { Standard, StopGradient, StraightThrough, InverseForwardJVP };
    Policy policy = Policy::Standard;
    std::string name;
    std::function<Mat(const Mat& x)> forward;
    // cotangent of the input given (x, y, cotangent of y)
    std::function<Mat(const Mat& x, const Mat& y, const Mat& ybar)> vjp;
    // tangent of the output given (x, y, tangent of x)
    std::function<Mat(const Mat& x, const Mat& y, const Mat& xdot)> jvp;
};

struct Node {
    Op op = Op::Leaf;
    int a = -1, b = -1;
    std::vector<int> ins;  // VCat / HCat
    int i0 = 0, i1 = 0, i2 = 0, i3 = 0;
    double s = 0.0;
    std::shared_ptr<const CustomFn> fn;
    Mat value;
};

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;
    const Mat& val() const;
    Eigen::Index rows() const { return val().rows(); }
    Eigen::Index cols() const { return val().cols(); }
};

// Per-node adjoints (or tangents); untouched nodes report zeros of the right shape.
class NodeMap {
public:
    NodeMap() = default;
    NodeMap(const Tape* tape, std::vector<Mat> data) : tape_(tape), data_(std::move(data)) {}
    Mat operator[](Var v) const;
    Mat at(int id) const;
    bool touched(int id) const { return data_[id].size() > 0; }

private:
    const Tape* tape_ = nullptr;
    std::vector<Mat> data_;
};

class Tape {
public:
    Var leaf(const Mat& v);
    Var constant(const Mat& v);
    Var push(Node n);

    int size() const { return static_cast<int>(nodes_.size()); }
    const Node& node(int id) const { return nodes_[id]; }
    const Mat& value(int id) const { return nodes_[id].value; }
    void set_leaf(Var leaf, const Mat& v);

    // Recompute every non-leaf value in order.
    void replay();

    // Reverse sweep seeded at any number of nodes (seeds accumulate).
    NodeMap vjp(const std::vector<std::pair<Var, Mat>>& seeds) const;
    // Forward tangent sweep from leaf (or any node) tangents.
    NodeMap jvp(const std::vector<std::pair<Var, Mat>>& tangents) const;

    // Number of nodes created so far, used by callers for instrumentation.
    long long created() const { return static_cast<long long>(nodes_.size()); }

private:
    Mat eval(const Node& n) const;
    std::vector<Node> nodes_;
};

inline const Mat& Var::val() const { return tape->value(id); }
inline const Mat& value(const Var& v) { return v.val(); }
inline double scalar(const Var& v) { return v.val()(0, 0); }

Var lift(const Var& like, const Mat& c);
Var lift(const Var& like, double c);

Var operator+(const Var& a, const Var& b);
Var operator+(const Var& a, const Mat& b);
Var operator+(const Mat& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator-(const Var& a, const Mat& b);
Var operator-(const Mat& a, const Var& b);
Var operator-(const Var& a);
Var operator*(const Var& a, double s);
Var operator*(double s, const Var& a);
Var operator*(const Var& a, const Var& b);  // matmul
Var operator*(const Var& a, const Mat& b);
Var operator*(const Mat& a, const Var& b);

Var matmul(const Var& a, const Var& b);
Var tr(const Var& a);
Var cmul(const Var& a, const Var& b);
Var smul(const Var& x, const Var& s);
Var add_scalar(const Var& x, double c);
Var dot(const Var& a, const Var& b);
Var solve(const Var& a, const Var& b);
Var solve(const Var& a, const Mat& b);
Var logdet(const Var& a);
Var chol(const Var& a);
Var solve_lt(const Var& l, const Var& b);
Var solve_lt(const Var& l, const Mat& b);
Var exp(const Var& a);
Var log(const Var& a);
Var softplus(const Var& a);
Var tanh(const Var& a);
Var gelu(const Var& a);
Var sqrt(const Var& a);
Var recip(const Var& a);
Var digamma(const Var& a);
Var lgamma(const Var& a);
Var lse(const Var& a, int axis = -1);
Var sum(const Var& a, int axis = -1);
Var slice(const Var& a, int r, int c, int nr, int nc);
Var vcat(const std::vector<Var>& parts);
Var hcat(const std::vector<Var>& parts);
Var reshape(const Var& a, int rows, int cols);
Var bcast_rows(const Var& a, int m);
Var bcast_cols(const Var& a, int n);
Var diag(const Var& v);
Var diag_part(const Var& a);
Var stop(const Var& a);

Var custom(const Var& x, std::shared_ptr<const CustomFn> fn);
// forward f(x), backward passes the cotangent unchanged
Var straight_through(const Var& x, std::function<Mat(const Mat&)> f, const std::string& name = "straight_through");

}  // namespace svae::ad
