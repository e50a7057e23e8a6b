#include "svae/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace svae::ad {

namespace {

// Phi(X): lower triangle with halved diagonal
Mat phi(const Mat& x) {
    Mat out = x.triangularView<Eigen::Lower>();
    out.diagonal() *= 0.5;
    return out;
}

Mat lse_weights(const Mat& x, const Mat& y, int axis) {
    Mat w(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const double m = axis < 0 ? y(0, 0) : (axis == 0 ? y(0, j) : y(i, 0));
            w(i, j) = std::isfinite(m) ? std::exp(x(i, j) - m) : 0.0;
        }
    return w;
}

Mat expand_reduced(const Mat& g, Eigen::Index rows, Eigen::Index cols, int axis) {
    if (axis < 0) return Mat::Constant(rows, cols, g(0, 0));
    if (axis == 0) return g.replicate(rows, 1);
    return g.replicate(1, cols);
}

void check_same(const Mat& a, const Mat& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeMismatch(std::string(what) + ": shapes " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()));
}

Tape* tape_of(const Var& a, const Var& b) {
    if (a.tape != b.tape) throw ShapeMismatch("vars belong to different tapes");
    return a.tape;
}

Var unary(Op op, const Var& a) {
    Node n;
    n.op = op;
    n.a = a.id;
    return a.tape->push(std::move(n));
}

Var binary(Op op, const Var& a, const Var& b) {
    Node n;
    n.op = op;
    n.a = a.id;
    n.b = b.id;
    return tape_of(a, b)->push(std::move(n));
}

}  // namespace

const char* op_name(Op op) {
    static const char* names[] = {"leaf", "const", "add", "sub", "neg", "mul", "scale", "mul_scalar",
                                  "matmul", "transpose", "solve_spd", "logdet_spd", "cholesky",
                                  "solve_lower_t", "exp", "log", "softplus", "tanh", "gelu", "sqrt",
                                  "recip", "digamma", "lgamma", "logsumexp", "sum", "slice", "vcat",
                                  "hcat", "reshape", "bcast_rows", "bcast_cols", "diag", "diag_part",
                                  "stop_gradient", "custom"};
    return names[static_cast<int>(op)];
}

Mat NodeMap::at(int id) const {
    if (data_[id].size() > 0) return data_[id];
    const Mat& v = tape_->value(id);
    return Mat::Zero(v.rows(), v.cols());
}

Mat NodeMap::operator[](Var v) const { return at(v.id); }

Var Tape::leaf(const Mat& v) {
    Node n;
    n.op = Op::Leaf;
    n.value = v;
    nodes_.push_back(std::move(n));
    return Var{this, size() - 1};
}

Var Tape::constant(const Mat& v) {
    Node n;
    n.op = Op::Const;
    n.value = v;
    nodes_.push_back(std::move(n));
    return Var{this, size() - 1};
}

Var Tape::push(Node n) {
    n.value = eval(n);
    nodes_.push_back(std::move(n));
    return Var{this, size() - 1};
}

void Tape::set_leaf(Var leaf, const Mat& v) {
    Node& n = nodes_[leaf.id];
    if (n.op != Op::Leaf) throw ShapeMismatch("set_leaf: node is not a leaf");
    check_same(n.value, v, "set_leaf");
    n.value = v;
}

void Tape::replay() {
    for (auto& n : nodes_)
        if (n.op != Op::Leaf && n.op != Op::Const) n.value = eval(n);
}

Mat Tape::eval(const Node& n) const {
    auto A = [&]() -> const Mat& { return nodes_[n.a].value; };
    auto B = [&]() -> const Mat& { return nodes_[n.b].value; };
    switch (n.op) {
        case Op::Leaf:
        case Op::Const: return n.value;
        case Op::Add: return A() + B();
        case Op::Sub: return A() - B();
        case Op::Neg: return -A();
        case Op::Mul: return A().cwiseProduct(B());
        case Op::Scale: return A() * n.s;
        case Op::MulScalar: return A() * B()(0, 0);
        case Op::MatMul: return A() * B();
        case Op::Transpose: return A().transpose();
        case Op::SolveSpd: return svae::solve(A(), B());
        case Op::LogDetSpd: return svae::logdet(A());
        case Op::Cholesky: return svae::chol(A());
        case Op::SolveLowerT: return svae::solve_lt(A(), B());
        case Op::Exp: return svae::exp(A());
        case Op::Log: return svae::log(A());
        case Op::Softplus: return svae::softplus(A());
        case Op::Tanh: return svae::tanh(A());
        case Op::Gelu: return svae::gelu(A());
        case Op::Sqrt: return svae::sqrt(A());
        case Op::Recip: return svae::recip(A());
        case Op::Digamma: return svae::digamma(A());
        case Op::Lgamma: return svae::lgamma(A());
        case Op::LogSumExp: return svae::lse(A(), n.i0);
        case Op::Sum: return svae::sum(A(), n.i0);
        case Op::Slice: return A().block(n.i0, n.i1, n.i2, n.i3);
        case Op::VCat:
        case Op::HCat: {
            std::vector<Mat> parts;
            parts.reserve(n.ins.size());
            for (int id : n.ins) parts.push_back(nodes_[id].value);
            return n.op == Op::VCat ? svae::vcat(parts) : svae::hcat(parts);
        }
        case Op::Reshape: return svae::reshape(A(), n.i0, n.i1);
        case Op::BcastRows: return A().replicate(n.i0, 1);
        case Op::BcastCols: return A().replicate(1, n.i0);
        case Op::Diag: return svae::diag(A());
        case Op::DiagPart: return A().diagonal();
        case Op::StopGradient: return A();
        case Op::Custom: return n.fn->forward(A());
    }
    return Mat();
}

NodeMap Tape::vjp(const std::vector<std::pair<Var, Mat>>& seeds) const {
    std::vector<Mat> adj(nodes_.size());
    int top = -1;
    for (const auto& [v, g] : seeds) {
        if (v.tape != this) throw ShapeMismatch("vjp: seed from another tape");
        check_same(nodes_[v.id].value, g, "vjp seed");
        if (adj[v.id].size() == 0)
            adj[v.id] = g;
        else
            adj[v.id] += g;
        top = std::max(top, v.id);
    }
    auto acc = [&](int id, const Mat& g) {
        if (nodes_[id].op == Op::Const) return;
        if (adj[id].size() == 0)
            adj[id] = g;
        else
            adj[id] += g;
    };
    for (int i = top; i >= 0; --i) {
        if (adj[i].size() == 0) continue;
        const Node& n = nodes_[i];
        const Mat& g = adj[i];
        const Mat& y = n.value;
        switch (n.op) {
            case Op::Leaf:
            case Op::Const:
            case Op::StopGradient: break;
            case Op::Add: acc(n.a, g); acc(n.b, g); break;
            case Op::Sub: acc(n.a, g); acc(n.b, -g); break;
            case Op::Neg: acc(n.a, -g); break;
            case Op::Mul:
                acc(n.a, g.cwiseProduct(nodes_[n.b].value));
                acc(n.b, g.cwiseProduct(nodes_[n.a].value));
                break;
            case Op::Scale: acc(n.a, g * n.s); break;
            case Op::MulScalar:
                acc(n.a, g * nodes_[n.b].value(0, 0));
                acc(n.b, Mat::Constant(1, 1, g.cwiseProduct(nodes_[n.a].value).sum()));
                break;
            case Op::MatMul:
                acc(n.a, g * nodes_[n.b].value.transpose());
                acc(n.b, nodes_[n.a].value.transpose() * g);
                break;
            case Op::Transpose: acc(n.a, g.transpose()); break;
            case Op::SolveSpd: {
                Mat bbar = svae::solve(nodes_[n.a].value, g);
                acc(n.a, -sym(bbar * y.transpose()));
                acc(n.b, bbar);
                break;
            }
            case Op::LogDetSpd: acc(n.a, inv_spd(nodes_[n.a].value) * g(0, 0)); break;
            case Op::Cholesky: {
                const Mat& l = y;
                Mat p = phi(l.transpose() * g);
                Mat x = l.transpose().triangularView<Eigen::Upper>().solve(p);
                Mat s = l.transpose().triangularView<Eigen::Upper>().solve(x.transpose()).transpose();
                acc(n.a, sym(s));
                break;
            }
            case Op::SolveLowerT: {
                const Mat& l = nodes_[n.a].value;
                Mat bbar = l.triangularView<Eigen::Lower>().solve(g);
                Mat lbar = -(y * bbar.transpose());
                acc(n.a, Mat(lbar.triangularView<Eigen::Lower>()));
                acc(n.b, bbar);
                break;
            }
            case Op::Exp: acc(n.a, g.cwiseProduct(y)); break;
            case Op::Log: acc(n.a, g.cwiseQuotient(nodes_[n.a].value)); break;
            case Op::Softplus:
                acc(n.a, g.cwiseProduct(nodes_[n.a].value.unaryExpr([](double x) { return sigmoid(x); })));
                break;
            case Op::Tanh: acc(n.a, g.cwiseProduct((1.0 - y.array().square()).matrix())); break;
            case Op::Gelu:
                acc(n.a, g.cwiseProduct(nodes_[n.a].value.unaryExpr([](double x) { return gelu_grad_scalar(x); })));
                break;
            case Op::Sqrt: acc(n.a, (g.array() / (2.0 * y.array())).matrix()); break;
            case Op::Recip: acc(n.a, (-g.array() * y.array().square()).matrix()); break;
            case Op::Digamma:
                acc(n.a, g.cwiseProduct(nodes_[n.a].value.unaryExpr([](double x) { return trigamma(x); })));
                break;
            case Op::Lgamma:
                acc(n.a, g.cwiseProduct(nodes_[n.a].value.unaryExpr([](double x) { return svae::digamma(x); })));
                break;
            case Op::LogSumExp: {
                const Mat& x = nodes_[n.a].value;
                Mat w = lse_weights(x, y, n.i0);
                acc(n.a, w.cwiseProduct(expand_reduced(g, x.rows(), x.cols(), n.i0)));
                break;
            }
            case Op::Sum: {
                const Mat& x = nodes_[n.a].value;
                acc(n.a, expand_reduced(g, x.rows(), x.cols(), n.i0));
                break;
            }
            case Op::Slice: {
                const Mat& x = nodes_[n.a].value;
                Mat z = Mat::Zero(x.rows(), x.cols());
                z.block(n.i0, n.i1, n.i2, n.i3) = g;
                acc(n.a, z);
                break;
            }
            case Op::VCat: {
                Eigen::Index r = 0;
                for (int id : n.ins) {
                    const Eigen::Index h = nodes_[id].value.rows();
                    acc(id, g.middleRows(r, h));
                    r += h;
                }
                break;
            }
            case Op::HCat: {
                Eigen::Index c = 0;
                for (int id : n.ins) {
                    const Eigen::Index w = nodes_[id].value.cols();
                    acc(id, g.middleCols(c, w));
                    c += w;
                }
                break;
            }
            case Op::Reshape: {
                const Mat& x = nodes_[n.a].value;
                acc(n.a, svae::reshape(g, static_cast<int>(x.rows()), static_cast<int>(x.cols())));
                break;
            }
            case Op::BcastRows: acc(n.a, g.colwise().sum()); break;
            case Op::BcastCols: acc(n.a, g.rowwise().sum()); break;
            case Op::Diag: acc(n.a, g.diagonal()); break;
            case Op::DiagPart: acc(n.a, Mat(g.col(0).asDiagonal())); break;
            case Op::Custom:
                if (n.fn->policy == CustomFn::Policy::StopGradient) break;
                acc(n.a, n.fn->vjp(nodes_[n.a].value, y, g));
                break;
        }
    }
    return NodeMap(this, std::move(adj));
}

NodeMap Tape::jvp(const std::vector<std::pair<Var, Mat>>& tangents) const {
    std::vector<Mat> tan(nodes_.size());
    int lo = size();
    for (const auto& [v, t] : tangents) {
        if (v.tape != this) throw ShapeMismatch("jvp: tangent for another tape");
        check_same(nodes_[v.id].value, t, "jvp tangent");
        tan[v.id] = t;
        lo = std::min(lo, v.id);
    }
    auto has = [&](int id) { return id >= 0 && tan[id].size() > 0; };
    auto T = [&](int id) -> Mat {
        if (tan[id].size() > 0) return tan[id];
        const Mat& v = nodes_[id].value;
        return Mat::Zero(v.rows(), v.cols());
    };
    for (int i = lo + 1; i < size(); ++i) {
        const Node& n = nodes_[i];
        if (tan[i].size() > 0) continue;  // explicitly seeded
        bool any = has(n.a) || has(n.b);
        for (int id : n.ins) any = any || has(id);
        if (!any) continue;
        const Mat& y = n.value;
        Mat out;
        switch (n.op) {
            case Op::Leaf:
            case Op::Const: continue;
            case Op::StopGradient: continue;
            case Op::Add: out = T(n.a) + T(n.b); break;
            case Op::Sub: out = T(n.a) - T(n.b); break;
            case Op::Neg: out = -T(n.a); break;
            case Op::Mul:
                out = T(n.a).cwiseProduct(nodes_[n.b].value) + nodes_[n.a].value.cwiseProduct(T(n.b));
                break;
            case Op::Scale: out = T(n.a) * n.s; break;
            case Op::MulScalar:
                out = T(n.a) * nodes_[n.b].value(0, 0) + nodes_[n.a].value * T(n.b)(0, 0);
                break;
            case Op::MatMul: out = T(n.a) * nodes_[n.b].value + nodes_[n.a].value * T(n.b); break;
            case Op::Transpose: out = T(n.a).transpose(); break;
            case Op::SolveSpd:
                out = svae::solve(nodes_[n.a].value, T(n.b) - sym(T(n.a)) * y);
                break;
            case Op::LogDetSpd:
                out = Mat::Constant(1, 1, svae::solve(nodes_[n.a].value, sym(T(n.a))).trace());
                break;
            case Op::Cholesky: {
                const Mat& l = y;
                Mat ds = sym(T(n.a));
                Mat v = l.triangularView<Eigen::Lower>().solve(ds);
                Mat x = l.triangularView<Eigen::Lower>().solve(v.transpose()).transpose();
                out = l * phi(x);
                break;
            }
            case Op::SolveLowerT: {
                const Mat& l = nodes_[n.a].value;
                Mat dl = T(n.a).triangularView<Eigen::Lower>();
                out = svae::solve_lt(l, T(n.b) - dl.transpose() * y);
                break;
            }
            case Op::Exp: out = T(n.a).cwiseProduct(y); break;
            case Op::Log: out = T(n.a).cwiseQuotient(nodes_[n.a].value); break;
            case Op::Softplus:
                out = T(n.a).cwiseProduct(nodes_[n.a].value.unaryExpr([](double x) { return sigmoid(x); }));
                break;
            case Op::Tanh: out = T(n.a).cwiseProduct((1.0 - y.array().square()).matrix()); break;
            case Op::Gelu:
                out = T(n.a).cwiseProduct(nodes_[n.a].value.unaryExpr([](double x) { return gelu_grad_scalar(x); }));
                break;
            case Op::Sqrt: out = (T(n.a).array() / (2.0 * y.array())).matrix(); break;
            case Op::Recip: out = (-T(n.a).array() * y.array().square()).matrix(); break;
            case Op::Digamma:
                out = T(n.a).cwiseProduct(nodes_[n.a].value.unaryExpr([](double x) { return trigamma(x); }));
                break;
            case Op::Lgamma:
                out = T(n.a).cwiseProduct(nodes_[n.a].value.unaryExpr([](double x) { return svae::digamma(x); }));
                break;
            case Op::LogSumExp: {
                const Mat& x = nodes_[n.a].value;
                out = svae::sum(lse_weights(x, y, n.i0).cwiseProduct(T(n.a)), n.i0);
                break;
            }
            case Op::Sum: out = svae::sum(T(n.a), n.i0); break;
            case Op::Slice: out = T(n.a).block(n.i0, n.i1, n.i2, n.i3); break;
            case Op::VCat:
            case Op::HCat: {
                std::vector<Mat> parts;
                for (int id : n.ins) parts.push_back(T(id));
                out = n.op == Op::VCat ? svae::vcat(parts) : svae::hcat(parts);
                break;
            }
            case Op::Reshape: out = svae::reshape(T(n.a), n.i0, n.i1); break;
            case Op::BcastRows: out = T(n.a).replicate(n.i0, 1); break;
            case Op::BcastCols: out = T(n.a).replicate(1, n.i0); break;
            case Op::Diag: out = svae::diag(T(n.a)); break;
            case Op::DiagPart: out = T(n.a).diagonal(); break;
            case Op::Custom:
                if (n.fn->policy == CustomFn::Policy::StopGradient) continue;
                out = n.fn->jvp(nodes_[n.a].value, y, T(n.a));
                break;
        }
        tan[i] = std::move(out);
    }
    return NodeMap(this, std::move(tan));
}

// ---------------------------------------------------------------------------
// op constructors

Var lift(const Var& like, const Mat& c) { return like.tape->constant(c); }
Var lift(const Var& like, double c) { return like.tape->constant(Mat::Constant(1, 1, c)); }

Var operator+(const Var& a, const Var& b) {
    check_same(a.val(), b.val(), "add");
    return binary(Op::Add, a, b);
}
Var operator+(const Var& a, const Mat& b) { return a + lift(a, b); }
Var operator+(const Mat& a, const Var& b) { return lift(b, a) + b; }
Var operator-(const Var& a, const Var& b) {
    check_same(a.val(), b.val(), "sub");
    return binary(Op::Sub, a, b);
}
Var operator-(const Var& a, const Mat& b) { return a - lift(a, b); }
Var operator-(const Mat& a, const Var& b) { return lift(b, a) - b; }
Var operator-(const Var& a) { return unary(Op::Neg, a); }
Var operator*(const Var& a, double s) {
    Node n;
    n.op = Op::Scale;
    n.a = a.id;
    n.s = s;
    return a.tape->push(std::move(n));
}
Var operator*(double s, const Var& a) { return a * s; }
Var operator*(const Var& a, const Var& b) { return matmul(a, b); }
Var operator*(const Var& a, const Mat& b) { return matmul(a, lift(a, b)); }
Var operator*(const Mat& a, const Var& b) { return matmul(lift(b, a), b); }

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
    return binary(Op::MatMul, a, b);
}
Var tr(const Var& a) { return unary(Op::Transpose, a); }
Var cmul(const Var& a, const Var& b) {
    check_same(a.val(), b.val(), "cmul");
    return binary(Op::Mul, a, b);
}
Var smul(const Var& x, const Var& s) {
    if (s.rows() != 1 || s.cols() != 1) throw ShapeMismatch("smul: scale must be 1x1");
    return binary(Op::MulScalar, x, s);
}
Var add_scalar(const Var& x, double c) {
    return x + Mat::Constant(x.rows(), x.cols(), c);
}
Var dot(const Var& a, const Var& b) { return sum(cmul(a, b)); }
Var solve(const Var& a, const Var& b) {
    if (a.rows() != a.cols() || a.rows() != b.rows()) throw ShapeMismatch("solve: shape mismatch");
    return binary(Op::SolveSpd, a, b);
}
Var solve(const Var& a, const Mat& b) { return solve(a, lift(a, b)); }
Var logdet(const Var& a) {
    if (a.rows() != a.cols()) throw ShapeMismatch("logdet: matrix not square");
    return unary(Op::LogDetSpd, a);
}
Var chol(const Var& a) {
    if (a.rows() != a.cols()) throw ShapeMismatch("chol: matrix not square");
    return unary(Op::Cholesky, a);
}
Var solve_lt(const Var& l, const Var& b) {
    if (l.rows() != l.cols() || l.rows() != b.rows()) throw ShapeMismatch("solve_lt: shape mismatch");
    return binary(Op::SolveLowerT, l, b);
}
Var solve_lt(const Var& l, const Mat& b) { return solve_lt(l, lift(l, b)); }
Var exp(const Var& a) { return unary(Op::Exp, a); }
Var log(const Var& a) { return unary(Op::Log, a); }
Var softplus(const Var& a) { return unary(Op::Softplus, a); }
Var tanh(const Var& a) { return unary(Op::Tanh, a); }
Var gelu(const Var& a) { return unary(Op::Gelu, a); }
Var sqrt(const Var& a) { return unary(Op::Sqrt, a); }
Var recip(const Var& a) { return unary(Op::Recip, a); }
Var digamma(const Var& a) { return unary(Op::Digamma, a); }
Var lgamma(const Var& a) { return unary(Op::Lgamma, a); }
Var lse(const Var& a, int axis) {
    Node n;
    n.op = Op::LogSumExp;
    n.a = a.id;
    n.i0 = axis < 0 ? -1 : axis;
    return a.tape->push(std::move(n));
}
Var sum(const Var& a, int axis) {
    Node n;
    n.op = Op::Sum;
    n.a = a.id;
    n.i0 = axis < 0 ? -1 : axis;
    return a.tape->push(std::move(n));
}
Var slice(const Var& a, int r, int c, int nr, int nc) {
    if (r < 0 || c < 0 || r + nr > a.rows() || c + nc > a.cols()) throw ShapeMismatch("slice out of range");
    Node n;
    n.op = Op::Slice;
    n.a = a.id;
    n.i0 = r;
    n.i1 = c;
    n.i2 = nr;
    n.i3 = nc;
    return a.tape->push(std::move(n));
}
static Var cat(Op op, const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat: no parts");
    Node n;
    n.op = op;
    for (const auto& p : parts) {
        if (p.tape != parts[0].tape) throw ShapeMismatch("concat: vars from different tapes");
        if (op == Op::VCat && p.cols() != parts[0].cols()) throw ShapeMismatch("vcat: column mismatch");
        if (op == Op::HCat && p.rows() != parts[0].rows()) throw ShapeMismatch("hcat: row mismatch");
        n.ins.push_back(p.id);
    }
    return parts[0].tape->push(std::move(n));
}
Var vcat(const std::vector<Var>& parts) { return cat(Op::VCat, parts); }
Var hcat(const std::vector<Var>& parts) { return cat(Op::HCat, parts); }
Var reshape(const Var& a, int rows, int cols) {
    if (static_cast<Eigen::Index>(rows) * cols != a.val().size()) throw ShapeMismatch("reshape: size mismatch");
    Node n;
    n.op = Op::Reshape;
    n.a = a.id;
    n.i0 = rows;
    n.i1 = cols;
    return a.tape->push(std::move(n));
}
Var bcast_rows(const Var& a, int m) {
    if (a.rows() != 1) throw ShapeMismatch("bcast_rows expects a row vector");
    Node n;
    n.op = Op::BcastRows;
    n.a = a.id;
    n.i0 = m;
    return a.tape->push(std::move(n));
}
Var bcast_cols(const Var& a, int cols) {
    if (a.cols() != 1) throw ShapeMismatch("bcast_cols expects a column vector");
    Node n;
    n.op = Op::BcastCols;
    n.a = a.id;
    n.i0 = cols;
    return a.tape->push(std::move(n));
}
Var diag(const Var& v) {
    if (v.cols() != 1) throw ShapeMismatch("diag expects a column vector");
    return unary(Op::Diag, v);
}
Var diag_part(const Var& a) {
    if (a.rows() != a.cols()) throw ShapeMismatch("diag_part: matrix not square");
    return unary(Op::DiagPart, a);
}
Var stop(const Var& a) { return unary(Op::StopGradient, a); }

Var custom(const Var& x, std::shared_ptr<const CustomFn> fn) {
    Node n;
    n.op = Op::Custom;
    n.a = x.id;
    n.fn = std::move(fn);
    return x.tape->push(std::move(n));
}

Var straight_through(const Var& x, std::function<Mat(const Mat&)> f, const std::string& name) {
    auto fn = std::make_shared<CustomFn>();
    fn->policy = CustomFn::Policy::StraightThrough;
    fn->name = name;
    fn->forward = [f = std::move(f), name](const Mat& in) {
        Mat out = f(in);
        if (out.rows() != in.rows() || out.cols() != in.cols())
            throw ShapeMismatch(name + ": output shape must equal input shape");
        return out;
    };
    fn->vjp = [](const Mat&, const Mat&, const Mat& g) { return g; };
    fn->jvp = [](const Mat&, const Mat&, const Mat& t) { return t; };
    return custom(x, fn);
}

}  // namespace svae::ad
