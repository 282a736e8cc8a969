#include "attrlab/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace attrlab {

namespace {
constexpr double kTwoOverSqrtPi = 1.1283791670955125738961589031;
constexpr double kInvSqrt2 = 0.70710678118654752440084436210;

double softplus_scalar(double x, double beta) {
    const double t = beta * x;
    if (t > 30.0) return x;  // linear branch, derivative 1
    return std::log1p(std::exp(t)) / beta;
}

double sigmoid_scalar(double x, double beta) {
    const double t = beta * x;
    if (t > 30.0) return 1.0;  // matches the softplus linear branch
    if (t < -30.0) return 0.0;
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}
}  // namespace

const Tensor& Var::val() const { return g->value(id); }

int DiffGraph::push(Node n) {
    n.value = eval(n);
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
}

Tensor DiffGraph::eval(const Node& n) const {
    auto pv = [&](std::size_t k) -> const Tensor& { return nodes_[std::size_t(n.parents[k])].value; };
    switch (n.op) {
        case Op::Input:
        case Op::Constant:
            return n.value;
        case Op::Add:
            return attrlab::add(pv(0), pv(1));
        case Op::Sub:
            return attrlab::sub(pv(0), pv(1));
        case Op::Mul:
            return attrlab::mul(pv(0), pv(1));
        case Op::Div: {
            Tensor out = pv(0);
            const Tensor& b = pv(1);
            for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] /= b.data[i];
            return out;
        }
        case Op::Affine: {
            Tensor out = pv(0);
            for (double& v : out.data) v = n.a * v + n.b;
            return out;
        }
        case Op::Exp: {
            Tensor out = pv(0);
            for (double& v : out.data) v = std::exp(v);
            return out;
        }
        case Op::Log: {
            Tensor out = pv(0);
            for (double& v : out.data) v = std::log(v);
            return out;
        }
        case Op::Sqrt: {
            Tensor out = pv(0);
            for (double& v : out.data) v = std::sqrt(v);
            return out;
        }
        case Op::Erf: {
            Tensor out = pv(0);
            for (double& v : out.data) v = std::erf(v);
            return out;
        }
        case Op::Relu: {
            Tensor out = pv(0);
            for (double& v : out.data) v = v > 0.0 ? v : 0.0;
            return out;
        }
        case Op::SoftplusBeta: {
            Tensor out = pv(0);
            for (double& v : out.data) v = softplus_scalar(v, n.a);
            return out;
        }
        case Op::SigmoidBeta: {
            Tensor out = pv(0);
            for (double& v : out.data) v = sigmoid_scalar(v, n.a);
            return out;
        }
        case Op::EluPlusOne: {
            Tensor out = pv(0);
            for (double& v : out.data) v = v > 0.0 ? v + 1.0 : std::exp(v);
            return out;
        }
        case Op::Sum: {
            double s = 0.0;
            for (double v : pv(0).data) s += v;
            return Tensor::scalar(s);
        }
        case Op::RowSum: {
            const Tensor& x = pv(0);
            const std::size_t m = x.rows(), c = x.cols();
            Tensor out = Tensor::zeros({m});
            for (std::size_t i = 0; i < m; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < c; ++j) s += x.data[i * c + j];
                out.data[i] = s;
            }
            return out;
        }
        case Op::ColSum: {
            const Tensor& x = pv(0);
            const std::size_t m = x.rows(), c = x.cols();
            Tensor out = Tensor::zeros({c});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < c; ++j) out.data[j] += x.data[i * c + j];
            return out;
        }
        case Op::BroadcastScalar:
            return Tensor::full(n.dims, pv(0).data[0]);
        case Op::RepeatCols: {
            const Tensor& v = pv(0);
            const std::size_t m = v.numel(), c = n.dims[0];
            Tensor out = Tensor::zeros({m, c});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = v.data[i];
            return out;
        }
        case Op::RepeatRows: {
            const Tensor& v = pv(0);
            const std::size_t c = v.numel(), m = n.dims[0];
            Tensor out = Tensor::zeros({m, c});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = v.data[j];
            return out;
        }
        case Op::MatMul:
            return attrlab::matmul(pv(0), pv(1));
        case Op::MatVec:
            return attrlab::matvec(pv(0), pv(1));
        case Op::Outer: {
            const Tensor& u = pv(0);
            const Tensor& v = pv(1);
            Tensor out = Tensor::zeros({u.numel(), v.numel()});
            for (std::size_t i = 0; i < u.numel(); ++i)
                for (std::size_t j = 0; j < v.numel(); ++j)
                    out.data[i * v.numel() + j] = u.data[i] * v.data[j];
            return out;
        }
        case Op::Transpose:
            return attrlab::transpose(pv(0));
        case Op::Reshape: {
            Tensor out = pv(0);
            out.shape = n.dims;
            return out;
        }
        case Op::Gather: {
            const Tensor& x = pv(0);
            Tensor out = Tensor::zeros(n.dims);
            for (std::size_t k = 0; k < n.index.size(); ++k) out.data[k] = x.data[n.index[k]];
            return out;
        }
        case Op::ScatterAdd: {
            const Tensor& v = pv(0);
            Tensor out = Tensor::zeros(n.dims);
            for (std::size_t k = 0; k < n.index.size(); ++k) out.data[n.index[k]] += v.data[k];
            return out;
        }
        case Op::ConcatRows: {
            const Tensor& a = pv(0);
            const Tensor& b = pv(1);
            Tensor out = Tensor::zeros({a.rows() + b.rows(), a.cols()});
            std::copy(a.data.begin(), a.data.end(), out.data.begin());
            std::copy(b.data.begin(), b.data.end(), out.data.begin() + long(a.numel()));
            return out;
        }
    }
    throw std::logic_error("eval: unhandled op");
}

Var DiffGraph::input(Tensor v) {
    Node n;
    n.op = Op::Input;
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return handle(int(nodes_.size()) - 1);
}

Var DiffGraph::constant(Tensor v) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return handle(int(nodes_.size()) - 1);
}

static void check_owner(const DiffGraph* g, Var v, const char* who) {
    if (v.g != g) throw std::invalid_argument(std::string(who) + ": variable from another graph");
}

static void check_same(const Tensor& a, const Tensor& b, const char* who) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(who) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

Var DiffGraph::add(Var a, Var b) {
    check_owner(this, a, "add");
    check_owner(this, b, "add");
    check_same(a.val(), b.val(), "add");
    Node n;
    n.op = Op::Add;
    n.parents = {a.id, b.id};
    return handle(push(std::move(n)));
}

Var DiffGraph::sub(Var a, Var b) {
    check_same(a.val(), b.val(), "sub");
    Node n;
    n.op = Op::Sub;
    n.parents = {a.id, b.id};
    return handle(push(std::move(n)));
}

Var DiffGraph::mul(Var a, Var b) {
    check_same(a.val(), b.val(), "mul");
    Node n;
    n.op = Op::Mul;
    n.parents = {a.id, b.id};
    return handle(push(std::move(n)));
}

Var DiffGraph::div(Var a, Var b) {
    check_same(a.val(), b.val(), "div");
    Node n;
    n.op = Op::Div;
    n.parents = {a.id, b.id};
    return handle(push(std::move(n)));
}

Var DiffGraph::affine(Var x, double a, double b) {
    Node n;
    n.op = Op::Affine;
    n.parents = {x.id};
    n.a = a;
    n.b = b;
    return handle(push(std::move(n)));
}

#define ATTRLAB_UNARY(NAME, OPTAG)                \
    Var DiffGraph::NAME(Var x) {                  \
        Node n;                                   \
        n.op = OPTAG;                             \
        n.parents = {x.id};                       \
        return handle(push(std::move(n)));        \
    }

ATTRLAB_UNARY(exp, Op::Exp)
ATTRLAB_UNARY(log, Op::Log)
ATTRLAB_UNARY(sqrt, Op::Sqrt)
ATTRLAB_UNARY(erf, Op::Erf)
#undef ATTRLAB_UNARY

Var DiffGraph::relu(Var x) {
    Node n;
    n.op = Op::Relu;
    n.parents = {x.id};
    n.mask = x.val();
    for (double& v : n.mask.data) v = v > 0.0 ? 1.0 : 0.0;
    return handle(push(std::move(n)));
}

Var DiffGraph::softplus(Var x, double beta) {
    if (beta <= 0.0) throw std::invalid_argument("softplus: beta must be positive");
    Node n;
    n.op = Op::SoftplusBeta;
    n.parents = {x.id};
    n.a = beta;
    return handle(push(std::move(n)));
}

Var DiffGraph::sigmoid(Var x, double beta) {
    Node n;
    n.op = Op::SigmoidBeta;
    n.parents = {x.id};
    n.a = beta;
    return handle(push(std::move(n)));
}

Var DiffGraph::elu_plus_one(Var x) {
    Node n;
    n.op = Op::EluPlusOne;
    n.parents = {x.id};
    n.mask = x.val();
    for (double& v : n.mask.data) v = v > 0.0 ? 1.0 : 0.0;
    return handle(push(std::move(n)));
}

Var DiffGraph::sum(Var x) {
    Node n;
    n.op = Op::Sum;
    n.parents = {x.id};
    return handle(push(std::move(n)));
}

Var DiffGraph::row_sum(Var x) {
    if (x.val().rank() != 2) throw std::invalid_argument("row_sum: rank-2 only");
    Node n;
    n.op = Op::RowSum;
    n.parents = {x.id};
    return handle(push(std::move(n)));
}

Var DiffGraph::col_sum(Var x) {
    if (x.val().rank() != 2) throw std::invalid_argument("col_sum: rank-2 only");
    Node n;
    n.op = Op::ColSum;
    n.parents = {x.id};
    return handle(push(std::move(n)));
}

Var DiffGraph::broadcast_scalar(Var s, std::vector<std::size_t> dims) {
    if (!s.val().is_scalar()) throw std::invalid_argument("broadcast_scalar: source not scalar");
    Node n;
    n.op = Op::BroadcastScalar;
    n.parents = {s.id};
    n.dims = std::move(dims);
    return handle(push(std::move(n)));
}

Var DiffGraph::repeat_cols(Var v, std::size_t cols) {
    if (v.val().rank() != 1) throw std::invalid_argument("repeat_cols: rank-1 only");
    Node n;
    n.op = Op::RepeatCols;
    n.parents = {v.id};
    n.dims = {cols};
    return handle(push(std::move(n)));
}

Var DiffGraph::repeat_rows(Var v, std::size_t m) {
    if (v.val().rank() != 1) throw std::invalid_argument("repeat_rows: rank-1 only");
    Node n;
    n.op = Op::RepeatRows;
    n.parents = {v.id};
    n.dims = {m};
    return handle(push(std::move(n)));
}

Var DiffGraph::matmul(Var a, Var b) {
    Node n;
    n.op = Op::MatMul;
    n.parents = {a.id, b.id};
    return handle(push(std::move(n)));
}

Var DiffGraph::matvec(Var a, Var x) {
    Node n;
    n.op = Op::MatVec;
    n.parents = {a.id, x.id};
    return handle(push(std::move(n)));
}

Var DiffGraph::outer(Var u, Var v) {
    if (u.val().rank() != 1 || v.val().rank() != 1)
        throw std::invalid_argument("outer: rank-1 operands required");
    Node n;
    n.op = Op::Outer;
    n.parents = {u.id, v.id};
    return handle(push(std::move(n)));
}

Var DiffGraph::transpose(Var a) {
    Node n;
    n.op = Op::Transpose;
    n.parents = {a.id};
    return handle(push(std::move(n)));
}

Var DiffGraph::reshape(Var x, std::vector<std::size_t> dims) {
    if (Tensor::numel_of(dims) != x.val().numel())
        throw std::invalid_argument("reshape: element count mismatch");
    Node n;
    n.op = Op::Reshape;
    n.parents = {x.id};
    n.dims = std::move(dims);
    return handle(push(std::move(n)));
}

Var DiffGraph::gather(Var x, std::vector<std::size_t> index, std::vector<std::size_t> dims) {
    if (Tensor::numel_of(dims) != index.size())
        throw std::invalid_argument("gather: dims/index size mismatch");
    for (std::size_t k : index)
        if (k >= x.val().numel()) throw std::invalid_argument("gather: index out of range");
    Node n;
    n.op = Op::Gather;
    n.parents = {x.id};
    n.index = std::move(index);
    n.dims = std::move(dims);
    return handle(push(std::move(n)));
}

Var DiffGraph::scatter_add(Var v, std::vector<std::size_t> index, std::vector<std::size_t> dims) {
    if (v.val().numel() != index.size())
        throw std::invalid_argument("scatter_add: value/index size mismatch");
    const std::size_t total = Tensor::numel_of(dims);
    for (std::size_t k : index)
        if (k >= total) throw std::invalid_argument("scatter_add: index out of range");
    Node n;
    n.op = Op::ScatterAdd;
    n.parents = {v.id};
    n.index = std::move(index);
    n.dims = std::move(dims);
    return handle(push(std::move(n)));
}

Var DiffGraph::concat_rows(Var a, Var b) {
    if (a.val().rank() != 2 || b.val().rank() != 2 || a.val().cols() != b.val().cols())
        throw std::invalid_argument("concat_rows: incompatible shapes");
    Node n;
    n.op = Op::ConcatRows;
    n.parents = {a.id, b.id};
    return handle(push(std::move(n)));
}

Var DiffGraph::slice_rows(Var a, std::size_t r0, std::size_t r1) {
    const Tensor& t = a.val();
    if (t.rank() != 2 || r1 > t.rows() || r0 >= r1)
        throw std::invalid_argument("slice_rows: bad range");
    const std::size_t c = t.cols();
    std::vector<std::size_t> idx;
    idx.reserve((r1 - r0) * c);
    for (std::size_t i = r0; i < r1; ++i)
        for (std::size_t j = 0; j < c; ++j) idx.push_back(i * c + j);
    return gather(a, std::move(idx), {r1 - r0, c});
}

Var DiffGraph::pick(Var v, std::size_t i) {
    if (i >= v.val().numel()) throw std::invalid_argument("pick: index out of range");
    return gather(v, {i}, {1});
}

Var DiffGraph::lse(Var z) {
    const Tensor& t = z.val();
    if (t.numel() == 0) throw std::invalid_argument("lse: empty vector");
    // Shift by the (detached) max: the value and all derivative orders of
    // log(sum(exp(z - m))) + m agree exactly with the unshifted expression.
    double m = t.data[0];
    for (double v : t.data) m = std::max(m, v);
    Var e = exp(affine(z, 1.0, -m));
    return affine(log(sum(e)), 1.0, m);
}

Var DiffGraph::softmax(Var z) {
    // copy shape up front: pushes below may reallocate node storage
    const std::vector<std::size_t> shape = z.val().shape;
    if (Tensor::numel_of(shape) == 0) throw std::invalid_argument("softmax: empty vector");
    double m = z.val().data[0];
    for (double v : z.val().data) m = std::max(m, v);
    Var e = exp(affine(z, 1.0, -m));
    return div(e, broadcast_scalar(sum(e), shape));
}

Var DiffGraph::neg_log_prob(Var z, std::size_t cls) {
    if (cls >= z.val().numel()) throw std::invalid_argument("neg_log_prob: class out of range");
    // l_i = z_i - LSE(z); this (not -l_i) is what every attribution target
    // differentiates, matching the worked examples.
    return sub(pick(z, cls), lse(z));
}

Var DiffGraph::row_lse(Var z) {
    const Tensor& t = z.val();
    const std::size_t m = t.rows(), c = t.cols();
    Tensor mx = Tensor::zeros({m});
    for (std::size_t i = 0; i < m; ++i) {
        double v = t.data[i * c];
        for (std::size_t j = 1; j < c; ++j) v = std::max(v, t.data[i * c + j]);
        mx.data[i] = v;
    }
    Var mc = constant(mx);
    Var e = exp(sub(z, repeat_cols(mc, c)));
    return add(log(row_sum(e)), mc);
}

Var DiffGraph::row_softmax(Var z) {
    const Tensor& t = z.val();
    const std::size_t m = t.rows(), c = t.cols();
    Tensor mx = Tensor::zeros({m});
    for (std::size_t i = 0; i < m; ++i) {
        double v = t.data[i * c];
        for (std::size_t j = 1; j < c; ++j) v = std::max(v, t.data[i * c + j]);
        mx.data[i] = v;
    }
    Var e = exp(sub(z, repeat_cols(constant(mx), c)));
    return div(e, repeat_cols(row_sum(e), c));
}

Var DiffGraph::gelu(Var x) {
    Var phi = affine(erf(affine(x, kInvSqrt2, 0.0)), 0.5, 0.5);
    return mul(x, phi);
}

std::vector<Var> DiffGraph::grad(Var output, const std::vector<Var>& wrt, GradRule rule) {
    check_owner(this, output, "grad");
    if (!output.val().is_scalar()) throw std::invalid_argument("grad: output must be scalar");
    for (Var w : wrt) {
        check_owner(this, w, "grad");
        if (w.id < 0 || std::size_t(w.id) >= nodes_.size())
            throw std::invalid_argument("grad: wrt node absent from graph");
    }

    const int limit = output.id;
    std::vector<int> adj(std::size_t(limit) + 1, -1);
    adj[std::size_t(limit)] = constant(Tensor::scalar(1.0)).id;

    auto accum = [&](int pid, Var c) {
        if (adj[std::size_t(pid)] < 0)
            adj[std::size_t(pid)] = c.id;
        else
            adj[std::size_t(pid)] = add(handle(adj[std::size_t(pid)]), c).id;
    };

    for (int i = limit; i >= 0; --i) {
        if (adj[std::size_t(i)] < 0) continue;
        // nodes_ grows while rules are emitted; copy the node first.
        const Node n = nodes_[std::size_t(i)];
        if (n.parents.empty()) continue;
        Var g = handle(adj[std::size_t(i)]);
        Var self = handle(i);
        switch (n.op) {
            case Op::Add:
                accum(n.parents[0], g);
                accum(n.parents[1], g);
                break;
            case Op::Sub:
                accum(n.parents[0], g);
                accum(n.parents[1], neg(g));
                break;
            case Op::Mul:
                accum(n.parents[0], mul(g, handle(n.parents[1])));
                accum(n.parents[1], mul(g, handle(n.parents[0])));
                break;
            case Op::Div: {
                Var b = handle(n.parents[1]);
                accum(n.parents[0], div(g, b));
                accum(n.parents[1], neg(div(mul(g, self), b)));
                break;
            }
            case Op::Affine:
                accum(n.parents[0], affine(g, n.a, 0.0));
                break;
            case Op::Exp:
                accum(n.parents[0], mul(g, self));
                break;
            case Op::Log:
                accum(n.parents[0], div(g, handle(n.parents[0])));
                break;
            case Op::Sqrt:
                accum(n.parents[0], affine(div(g, self), 0.5, 0.0));
                break;
            case Op::Erf: {
                Var x = handle(n.parents[0]);
                Var d = affine(exp(affine(mul(x, x), -1.0, 0.0)), kTwoOverSqrtPi, 0.0);
                accum(n.parents[0], mul(g, d));
                break;
            }
            case Op::Relu: {
                Var base = (rule == GradRule::guided) ? relu(g) : g;
                accum(n.parents[0], mul(base, constant(n.mask)));
                break;
            }
            case Op::SoftplusBeta:
                accum(n.parents[0], mul(g, sigmoid(handle(n.parents[0]), n.a)));
                break;
            case Op::SigmoidBeta: {
                Var d = affine(mul(self, affine(self, -1.0, 1.0)), n.a, 0.0);
                accum(n.parents[0], mul(g, d));
                break;
            }
            case Op::EluPlusOne: {
                Tensor inv = n.mask;
                for (double& v : inv.data) v = 1.0 - v;
                Var d = add(constant(n.mask), mul(constant(inv), self));
                accum(n.parents[0], mul(g, d));
                break;
            }
            case Op::Sum:
                accum(n.parents[0], broadcast_scalar(g, nodes_[std::size_t(n.parents[0])].value.shape));
                break;
            case Op::RowSum:
                accum(n.parents[0], repeat_cols(g, nodes_[std::size_t(n.parents[0])].value.cols()));
                break;
            case Op::ColSum:
                accum(n.parents[0], repeat_rows(g, nodes_[std::size_t(n.parents[0])].value.rows()));
                break;
            case Op::BroadcastScalar:
                accum(n.parents[0], sum(g));
                break;
            case Op::RepeatCols:
                accum(n.parents[0], row_sum(g));
                break;
            case Op::RepeatRows:
                accum(n.parents[0], col_sum(g));
                break;
            case Op::MatMul:
                accum(n.parents[0], matmul(g, transpose(handle(n.parents[1]))));
                accum(n.parents[1], matmul(transpose(handle(n.parents[0])), g));
                break;
            case Op::MatVec:
                accum(n.parents[0], outer(g, handle(n.parents[1])));
                accum(n.parents[1], matvec(transpose(handle(n.parents[0])), g));
                break;
            case Op::Outer:
                accum(n.parents[0], matvec(g, handle(n.parents[1])));
                accum(n.parents[1], matvec(transpose(g), handle(n.parents[0])));
                break;
            case Op::Transpose:
                accum(n.parents[0], transpose(g));
                break;
            case Op::Reshape:
                accum(n.parents[0], reshape(g, nodes_[std::size_t(n.parents[0])].value.shape));
                break;
            case Op::Gather:
                accum(n.parents[0],
                      scatter_add(g, n.index, nodes_[std::size_t(n.parents[0])].value.shape));
                break;
            case Op::ScatterAdd:
                accum(n.parents[0],
                      gather(g, n.index, nodes_[std::size_t(n.parents[0])].value.shape));
                break;
            case Op::ConcatRows: {
                const std::size_t m1 = nodes_[std::size_t(n.parents[0])].value.rows();
                const std::size_t m2 = nodes_[std::size_t(n.parents[1])].value.rows();
                accum(n.parents[0], slice_rows(g, 0, m1));
                accum(n.parents[1], slice_rows(g, m1, m1 + m2));
                break;
            }
            case Op::Input:
            case Op::Constant:
                break;
        }
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (Var w : wrt) {
        if (w.id <= limit && adj[std::size_t(w.id)] >= 0)
            out.push_back(handle(adj[std::size_t(w.id)]));
        else
            out.push_back(constant(Tensor::zeros(w.val().shape)));
    }
    return out;
}

Var DiffGraph::hvp(Var output, Var x, const Tensor& v, GradRule rule) {
    if (!x.val().same_shape(v))
        throw std::invalid_argument("hvp: direction shape mismatch");
    Var g = grad(output, {x}, rule)[0];
    Var s = dot(g, constant(v));
    return grad(s, {x}, rule)[0];
}

double lse_value(const Tensor& z) {
    if (z.numel() == 0) throw std::invalid_argument("lse: empty vector");
    double m = z.data[0];
    for (double v : z.data) m = std::max(m, v);
    double s = 0.0;
    for (double v : z.data) s += std::exp(v - m);
    return std::log(s) + m;
}

double neg_log_prob_value(const Tensor& z, std::size_t cls) {
    if (cls >= z.numel()) throw std::invalid_argument("neg_log_prob: class out of range");
    return z.data[cls] - lse_value(z);
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& point,
                        double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be positive");
    Tensor g = Tensor::zeros(point.shape);
    Tensor p = point;
    for (std::size_t i = 0; i < p.numel(); ++i) {
        const double x0 = p.data[i];
        p.data[i] = x0 + h;
        const double fp = f(p);
        p.data[i] = x0 - h;
        const double fm = f(p);
        p.data[i] = x0;
        g.data[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

Tensor grad_at(const ScalarFn& f, const Tensor& point) {
    DiffGraph g;
    Var x = g.input(point);
    Var y = f(g, x);
    return g.grad(y, {x})[0].val();
}

Tensor hvp_at(const ScalarFn& f, const Tensor& point, const Tensor& v) {
    DiffGraph g;
    Var x = g.input(point);
    Var y = f(g, x);
    return g.hvp(y, x, v).val();
}

}  // namespace attrlab
