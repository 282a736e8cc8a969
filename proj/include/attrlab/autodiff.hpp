#pragma once

#include <functional>
#include <vector>

#include "attrlab/tensor.hpp"

namespace attrlab {

// Recorded tensor ops. Every reverse rule emits ops from this same set, so the
// nodes produced by a backward sweep are differentiable again (re-entrant
// higher-order reverse mode on one shared graph).
enum class Op {
    Input,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Affine,  // a*x + b elementwise
    Exp,
    Log,
    Sqrt,
    Erf,
    Relu,
    SoftplusBeta,
    SigmoidBeta,
    EluPlusOne,
    Sum,              // -> {1}
    RowSum,           // {m,n} -> {m}
    ColSum,           // {m,n} -> {n}
    BroadcastScalar,  // {1} -> dims
    RepeatCols,       // {m} -> {m,n}
    RepeatRows,       // {n} -> {m,n}
    MatMul,
    MatVec,
    Outer,
    Transpose,
    Reshape,
    Gather,      // flat index table -> dims
    ScatterAdd,  // inverse of Gather
    ConcatRows,
};

struct Node {
    Op op;
    std::vector<int> parents;  // parent ids are always < own id
    Tensor value;
    double a = 0.0, b = 0.0;          // Affine coefficients / activation beta
    std::vector<std::size_t> dims;    // target shape where the op needs one
    std::vector<std::size_t> index;   // Gather/ScatterAdd flat index table
    Tensor mask;                      // Relu/EluPlusOne gate captured at forward
};

class DiffGraph;

// Lightweight handle into a graph node.
struct Var {
    DiffGraph* g = nullptr;
    int id = -1;
    bool valid() const { return g != nullptr && id >= 0; }
    const Tensor& val() const;
};

enum class GradRule {
    standard,
    guided,  // zero negative adjoints entering every ReLU (guided backprop)
};

class DiffGraph {
  public:
    Var input(Tensor v);
    Var constant(Tensor v);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var affine(Var x, double a, double b);
    Var exp(Var x);
    Var log(Var x);
    Var sqrt(Var x);
    Var erf(Var x);
    Var relu(Var x);
    Var softplus(Var x, double beta);
    Var sigmoid(Var x, double beta);
    Var elu_plus_one(Var x);
    Var sum(Var x);
    Var row_sum(Var x);
    Var col_sum(Var x);
    Var broadcast_scalar(Var s, std::vector<std::size_t> dims);
    Var repeat_cols(Var v, std::size_t n);
    Var repeat_rows(Var v, std::size_t m);
    Var matmul(Var a, Var b);
    Var matvec(Var a, Var x);
    Var outer(Var u, Var v);
    Var transpose(Var a);
    Var reshape(Var x, std::vector<std::size_t> dims);
    Var gather(Var x, std::vector<std::size_t> index, std::vector<std::size_t> dims);
    Var scatter_add(Var v, std::vector<std::size_t> index, std::vector<std::size_t> dims);
    Var concat_rows(Var a, Var b);

    // Composites (exact derivatives of any order fall out of the primitives).
    Var neg(Var x) { return affine(x, -1.0, 0.0); }
    Var dot(Var a, Var b) { return sum(mul(a, b)); }
    Var slice_rows(Var a, std::size_t r0, std::size_t r1);
    Var pick(Var v, std::size_t i);  // vector element -> {1}
    Var lse(Var z);                  // shift-stable log-sum-exp of a vector
    Var softmax(Var z);
    Var log_probs(Var z) { return sub(z, broadcast_scalar(lse(z), z.val().shape)); }
    Var neg_log_prob(Var z, std::size_t cls);
    Var row_lse(Var z);      // {m,n} -> {m}, shift-stable per row
    Var row_softmax(Var z);  // {m,n} -> {m,n}
    Var gelu(Var x);         // exact Gaussian CDF form: x * Phi(x)
    Var l2norm_sq(Var v) { return sum(mul(v, v)); }
    Var l2norm(Var v) { return sqrt(l2norm_sq(v)); }
    Var unit(Var v) { return div(v, broadcast_scalar(l2norm(v), v.val().shape)); }

    const Tensor& value(int id) const { return nodes_.at(std::size_t(id)).value; }
    const Node& node(int id) const { return nodes_.at(std::size_t(id)); }
    std::size_t size() const { return nodes_.size(); }

    // Reverse-mode sweep from a scalar output. Returns one adjoint node per wrt
    // entry (zeros when the output does not depend on it). Nodes are appended,
    // never mutated, so the result may itself be differentiated.
    std::vector<Var> grad(Var output, const std::vector<Var>& wrt,
                          GradRule rule = GradRule::standard);

    // H*v of a scalar node w.r.t. x, as grad of <grad, v>.
    Var hvp(Var output, Var x, const Tensor& v, GradRule rule = GradRule::standard);

  private:
    std::vector<Node> nodes_;
    int push(Node n);
    Var handle(int id) { return Var{this, id}; }
    Tensor eval(const Node& n) const;
};

// Convenience value-level entry points (spec ops).
double lse_value(const Tensor& z);
double neg_log_prob_value(const Tensor& z, std::size_t cls);

// Central-difference gradient oracle: (f(x+h e_i) - f(x-h e_i)) / 2h.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& point,
                        double h);

// Exact H*v for a scalar-valued graph builder at `point`.
using ScalarFn = std::function<Var(DiffGraph&, Var)>;
Tensor hvp_at(const ScalarFn& f, const Tensor& point, const Tensor& v);
Tensor grad_at(const ScalarFn& f, const Tensor& point);

// Operator sugar.
inline Var operator+(Var a, Var b) { return a.g->add(a, b); }
inline Var operator-(Var a, Var b) { return a.g->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.g->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.g->div(a, b); }

}  // namespace attrlab
