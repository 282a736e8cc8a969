#include "attrlab/curvature.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "attrlab/rng.hpp"

namespace attrlab {

namespace {

// One H*v of -l_i against a fresh graph.
Tensor model_hvp(const ForwardFn& fwd, const Tensor& x, std::size_t cls, const Tensor& v) {
    DiffGraph g;
    Var xv = g.input(x);
    Forward f = fwd(g, xv);
    Var neg_li = g.neg(g.pick(f.log_probs, cls));
    return g.hvp(neg_li, xv, v).val();
}

PowerResult power_iterate(const std::function<Tensor(const Tensor&)>& apply, std::size_t dim,
                          int max_iters, double tol, std::uint64_t seed) {
    Rng rng(Rng::derive(seed, 0x9a1));
    Tensor v = rng.normal_tensor({dim});
    v = scale(v, 1.0 / norm2(v));
    PowerResult res;
    double prev = 0.0;
    for (int it = 1; it <= max_iters; ++it) {
        Tensor w = apply(v);
        const double lambda = dot(v, w);
        const double wn = norm2(w);
        res.iterations = it;
        if (wn == 0.0) {  // exactly zero operator
            res.value = 0.0;
            res.vector = v;
            return res;
        }
        v = scale(w, 1.0 / wn);
        if (it > 1 && std::fabs(lambda - prev) <= tol * std::max(1.0, std::fabs(lambda))) {
            res.value = std::fabs(lambda);
            res.vector = v;
            return res;
        }
        prev = lambda;
    }
    res.value = std::fabs(prev);
    res.vector = v;
    res.converged = false;
    return res;
}

}  // namespace

PowerResult hessian_lambda_max(const ScalarFn& f, const Tensor& x, int max_iters, double tol) {
    auto apply = [&](const Tensor& v) { return hvp_at(f, x, v); };
    return power_iterate(apply, x.numel(), max_iters, tol, 0x11aa);
}

PowerResult input_hessian_lambda_max(const ForwardFn& fwd, const Tensor& x,
                                     std::optional<std::size_t> cls, int max_iters, double tol) {
    std::size_t i;
    if (cls.has_value()) {
        i = *cls;
    } else {
        DiffGraph g;
        Var xv = g.input(x);
        i = argmax_class(fwd(g, xv).log_probs.val());
    }
    auto apply = [&](const Tensor& v) { return model_hvp(fwd, x, i, v); };
    return power_iterate(apply, x.numel(), max_iters, tol, 0x11aa);
}

PowerResult input_hessian_lambda_max(const Model& model, const Tensor& x,
                                     std::optional<std::size_t> cls, int max_iters, double tol) {
    return input_hessian_lambda_max(make_forward_fn(model), x, cls, max_iters, tol);
}

double spectral_norm(const Tensor& a, int iters, double tol) {
    if (a.rank() != 2) throw std::invalid_argument("spectral_norm: rank-2 only");
    Tensor at = transpose(a);
    auto apply = [&](const Tensor& v) { return matvec(at, matvec(a, v)); };
    PowerResult r = power_iterate(apply, a.cols(), iters, tol, 0x22bb);
    return std::sqrt(r.value);
}

namespace {

// Smallest eigenvalue of a small symmetric matrix by inverse power iteration
// on (s*I - A); s an upper bound on the spectrum.
double min_eig_sym(const Tensor& a) {
    const std::size_t n = a.rows();
    double bound = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) row += std::fabs(a.at(i, j));
        bound = std::max(bound, row);
    }
    Tensor shifted = scale(a, -1.0);
    for (std::size_t i = 0; i < n; ++i) shifted.at(i, i) += bound;
    auto apply = [&](const Tensor& v) { return matvec(shifted, v); };
    PowerResult r = power_iterate(apply, n, 400, 1e-10, 0x33cc);
    // r.value = bound - min_eig
    return bound - r.value;
}

struct SpaceBinding {
    // forward as a function of the differentiated vector w
    std::function<Forward(DiffGraph&, Var)> forward;
    Tensor w0;
};

SpaceBinding make_binding(const Model& model, const Tensor& x, WrtSpace space) {
    SpaceBinding b;
    if (space == WrtSpace::input) {
        b.w0 = x;
        Model m = model;
        b.forward = [m](DiffGraph& g, Var w) {
            BoundParams bp = bind_params(g, m.params);
            return model_forward(g, m.spec, bp, w);
        };
    } else {
        b.w0 = model.params.flatten();
        Model m = model;
        Tensor xc = x;
        b.forward = [m, xc](DiffGraph& g, Var w) {
            BoundParams bp;
            std::size_t off = 0;
            for (const auto& [name, p] : m.params.items) {
                const std::size_t n = p.value.numel();
                std::vector<std::size_t> idx(n);
                for (std::size_t k = 0; k < n; ++k) idx[k] = off + k;
                bp.vars.push_back({name, g.gather(w, std::move(idx), p.value.shape)});
                off += n;
            }
            return model_forward(g, m.spec, bp, g.constant(xc));
        };
    }
    return b;
}

Tensor dense_hessian_of(const std::function<Var(DiffGraph&, Var)>& scalar_fn, const Tensor& w0) {
    const std::size_t n = w0.numel();
    Tensor H = Tensor::zeros({n, n});
    for (std::size_t j = 0; j < n; ++j) {
        Tensor ej = Tensor::zeros({n});
        ej.data[j] = 1.0;
        DiffGraph g;
        Var wv = g.input(w0);
        Var y = scalar_fn(g, wv);
        Tensor col = g.hvp(y, wv, ej).val();
        for (std::size_t i = 0; i < n; ++i) H.at(i, j) = col.data[i];
    }
    return H;
}

}  // namespace

GnDecomposition gn_decomposition_dense(const Model& model, const Tensor& x,
                                       std::optional<std::size_t> cls, WrtSpace space,
                                       std::size_t dense_cap, double assert_tol) {
    SpaceBinding bind = make_binding(model, x, space);
    const std::size_t n = bind.w0.numel();
    if (n > dense_cap)
        throw std::invalid_argument("gn_decomposition_dense: dimension " + std::to_string(n) +
                                    " above the dense cap");

    Tensor l0;
    {
        DiffGraph g;
        Var wv = g.input(bind.w0);
        l0 = bind.forward(g, wv).log_probs.val();
    }
    const std::size_t i = cls.has_value() ? *cls : argmax_class(l0);
    const std::size_t d = l0.numel();
    Tensor p = l0;
    for (double& v : p.data) v = std::exp(v);

    GnDecomposition out;
    out.H = dense_hessian_of(
        [&](DiffGraph& g, Var w) { return g.neg(g.pick(bind.forward(g, w).log_probs, i)); },
        bind.w0);

    // class-logit Jacobian J[k,:] = grad_w z_k
    Tensor J = Tensor::zeros({d, n});
    for (std::size_t k = 0; k < d; ++k) {
        DiffGraph g;
        Var wv = g.input(bind.w0);
        Forward f = bind.forward(g, wv);
        Tensor gk = g.grad(g.pick(f.logits, k), {wv})[0].val();
        for (std::size_t j = 0; j < n; ++j) J.at(k, j) = gk.data[j];
    }

    // G = J^T (diag(p) - p p^T) J
    Tensor lam = Tensor::zeros({d, d});
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b)
            lam.at(a, b) = (a == b ? p.data[a] : 0.0) - p.data[a] * p.data[b];
    out.G = matmul(transpose(J), matmul(lam, J));

    // F = sum_k p_k H(z_k) - H(z_i)
    out.F = Tensor::zeros({n, n});
    for (std::size_t k = 0; k < d; ++k) {
        Tensor Hk = dense_hessian_of(
            [&](DiffGraph& g, Var w) { return g.pick(bind.forward(g, w).logits, k); }, bind.w0);
        const double coeff = p.data[k] - (k == i ? 1.0 : 0.0);
        out.F = add(out.F, scale(Hk, coeff));
    }

    out.max_abs_err = max_abs(sub(out.H, add(out.G, out.F)));
    out.g_min_eig = min_eig_sym(out.G);
    if (out.max_abs_err > assert_tol)
        throw std::logic_error("gn_decomposition_dense: H != G + F (err " +
                               std::to_string(out.max_abs_err) + ")");
    return out;
}

namespace {

Tensor class_jacobian_gram(const Model& model, const Tensor& x, Tensor& probs) {
    DiffGraph g;
    auto [flat, bp] = bind_params_flat(g, model.params);
    Forward f = model_forward(g, model.spec, bp, g.input(x));
    probs = f.log_probs.val();
    for (double& v : probs.data) v = std::exp(v);
    const std::size_t d = model.spec.num_classes;
    std::vector<Tensor> rows;
    rows.reserve(d);
    for (std::size_t k = 0; k < d; ++k)
        rows.push_back(g.grad(g.pick(f.logits, k), {flat})[0].val());
    Tensor gram = Tensor::zeros({d, d});
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            const double v = dot(rows[a], rows[b]);
            gram.at(a, b) = v;
            gram.at(b, a) = v;
        }
    return gram;
}

double trace_exact_one(const Model& model, const Tensor& x) {
    Tensor p;
    Tensor gram = class_jacobian_gram(model, x, p);
    const std::size_t d = p.numel();
    // tr(G) = sum_{ab} Lambda_ab Gram_ab
    double tr = 0.0;
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) {
            const double lam = (a == b ? p.data[a] : 0.0) - p.data[a] * p.data[b];
            tr += lam * gram.at(a, b);
        }
    return tr;
}

// v^T G v via one JVP: Jv from the two-VJP trick, then (Jv)^T Lambda (Jv).
double trace_quadform(const Model& model, const Tensor& x, const Tensor& v) {
    DiffGraph g;
    auto [flat, bp] = bind_params_flat(g, model.params);
    Forward f = model_forward(g, model.spec, bp, g.input(x));
    Tensor p = f.log_probs.val();
    for (double& q : p.data) q = std::exp(q);
    const std::size_t d = model.spec.num_classes;

    Var u = g.input(Tensor::zeros({d}));
    Var s = g.dot(f.logits, u);
    Var gtheta = g.grad(s, {flat})[0];
    Var t = g.dot(gtheta, g.constant(v));
    Tensor jv = g.grad(t, {u})[0].val();  // J v, length d

    double out = 0.0;
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) {
            const double lam = (a == b ? p.data[a] : 0.0) - p.data[a] * p.data[b];
            out += lam * jv.data[a] * jv.data[b];
        }
    return out;
}

}  // namespace

double param_gn_trace(const Model& model, const std::vector<Tensor>& batch, TraceMode mode,
                      int probes, std::size_t exact_cap, std::uint64_t seed) {
    if (batch.empty()) throw std::invalid_argument("param_gn_trace: empty batch");
    const std::size_t P = model.params.total_size();
    TraceMode m = mode;
    if (m == TraceMode::automatic)
        m = (P <= exact_cap) ? TraceMode::exact : TraceMode::hutchinson;

    double acc = 0.0;
    if (m == TraceMode::exact) {
        for (const Tensor& x : batch) acc += trace_exact_one(model, x);
        return acc / double(batch.size());
    }
    if (probes < 64)
        throw std::invalid_argument("param_gn_trace: hutchinson needs >= 64 probes");
    Rng rng(Rng::derive(seed, 0x7ace));
    for (const Tensor& x : batch) {
        double est = 0.0;
        for (int t = 0; t < probes; ++t) {
            Tensor v = Tensor::zeros({P});
            for (double& q : v.data) q = rng.uniform() < 0.5 ? -1.0 : 1.0;
            est += trace_quadform(model, x, v);
        }
        acc += est / double(probes);
    }
    return acc / double(batch.size());
}

double gn_trace_l2(const ScalarParamFn& f, const Tensor& theta, const std::vector<Tensor>& xs) {
    if (xs.empty()) throw std::invalid_argument("gn_trace_l2: empty batch");
    double acc = 0.0;
    for (const Tensor& x : xs) {
        DiffGraph g;
        Var th = g.input(theta);
        Var y = f(g, th, x);
        Tensor grad = g.grad(y, {th})[0].val();
        acc += dot(grad, grad);
    }
    return acc / double(xs.size());
}

namespace {

// ||d h/d x||_2 by power iteration on J^T J; h built by `build` from x.
double jacobian_spectral_norm(const Model& model, const Tensor& x, std::size_t layer_index,
                              int iters = 100, double tol = 1e-7) {
    // h = input of layer `layer_index` (0-based); layer 0 input is x itself
    auto layer_vec = [&](DiffGraph& g, Var xv) {
        BoundParams bp = bind_params(g, model.params);
        Forward f = mlp_forward(g, model.spec, bp, xv);
        return f.layer_inputs.at(layer_index);
    };
    const std::size_t n = x.numel();
    std::size_t hdim;
    {
        DiffGraph g;
        hdim = layer_vec(g, g.input(x)).val().numel();
    }
    auto apply = [&](const Tensor& v) {
        // w = J v via the two-VJP trick
        Tensor jv;
        {
            DiffGraph g;
            Var xv = g.input(x);
            Var h = layer_vec(g, xv);
            Var u = g.input(Tensor::zeros({hdim}));
            Var s = g.dot(h, u);
            Var gx = g.grad(s, {xv})[0];
            Var t = g.dot(gx, g.constant(v));
            jv = g.grad(t, {u})[0].val();
        }
        // J^T w
        DiffGraph g;
        Var xv = g.input(x);
        Var h = layer_vec(g, xv);
        Var s = g.dot(h, g.constant(jv));
        return g.grad(s, {xv})[0].val();
    };
    PowerResult r = power_iterate(apply, n, iters, tol, 0x44dd);
    return std::sqrt(r.value);
}

}  // namespace

SnrReport snr_c(const Model& model, const Tensor& x) {
    if (model.spec.kind != ModelKind::mlp)
        throw std::invalid_argument("snr_c: defined for MLP models");
    SnrReport rep;
    DiffGraph g;
    BoundParams bp = bind_params(g, model.params);
    Forward f = mlp_forward(g, model.spec, bp, g.input(x));
    const std::size_t L = f.layer_inputs.size();
    for (std::size_t l = 0; l < L; ++l) {
        const Tensor h = f.layer_inputs[l].val();
        const double signal = dot(h, h);
        const double wnorm = spectral_norm(model.params.at("w" + std::to_string(l)).value);
        const double jnorm = (l == 0) ? 1.0 : jacobian_spectral_norm(model, x, l);
        const double den = wnorm * wnorm * jnorm * jnorm;
        if (den == 0.0) {
            rep.warnings.push_back("layer " + std::to_string(l) + " excluded: zero denominator");
            continue;
        }
        const double term = signal / den;
        rep.terms.push_back(term);
        rep.value += term;
    }
    return rep;
}

EntropyStats attention_entropy(const AttentionStack& stack, const Model* model) {
    if (stack.layers.empty()) throw std::invalid_argument("attention_entropy: empty stack");
    EntropyStats es;
    es.tokens = stack.tokens;
    const double max_ent = std::log(double(stack.tokens));
    for (const auto& heads : stack.layers) {
        double acc = 0.0;
        std::size_t rows = 0;
        for (const Tensor& raw : heads) {
            Tensor A = raw;
            if (!stack.normalized) {
                DiffGraph g;
                A = g.row_softmax(g.input(A)).val();
            }
            for (std::size_t i = 0; i < A.rows(); ++i) {
                double h = 0.0;
                for (std::size_t j = 0; j < A.cols(); ++j) {
                    const double p = A.at(i, j);
                    if (p < -1e-12)
                        throw std::invalid_argument(
                            "attention_entropy: negative entry in a normalized stack");
                    if (p > 0.0) h -= p * std::log(p);  // 0 ln 0 = 0
                }
                acc += h;
                ++rows;
            }
        }
        const double ent = acc / double(rows);
        es.mean_entropy.push_back(ent);
        es.distance_to_uniform.push_back(max_ent - ent);
    }
    if (model != nullptr && model->spec.kind == ModelKind::vit) {
        for (std::size_t l = 0; l < model->spec.depth; ++l) {
            const std::string pre = "blk" + std::to_string(l) + ".";
            const Tensor& wk = model->params.at(pre + "wk").value;
            const Tensor& wq = model->params.at(pre + "wq").value;
            es.sigma.push_back(spectral_norm(matmul(wk, transpose(wq))));
        }
    }
    return es;
}

namespace {

double entropy_of(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

void enumerate_simplex(std::size_t T, std::size_t N, std::vector<std::size_t>& cur,
                       std::vector<std::vector<double>>& out) {
    if (cur.size() == T - 1) {
        std::size_t used = 0;
        for (std::size_t k : cur) used += k;
        std::vector<double> p;
        p.reserve(T);
        for (std::size_t k : cur) p.push_back(double(k) / double(N));
        p.push_back(double(N - used) / double(N));
        out.push_back(std::move(p));
        return;
    }
    std::size_t used = 0;
    for (std::size_t k : cur) used += k;
    for (std::size_t k = 0; k + used <= N; ++k) {
        cur.push_back(k);
        enumerate_simplex(T, N, cur, out);
        cur.pop_back();
    }
}

}  // namespace

EntropyBoundResult entropy_bound_oracle(std::size_t T, const std::vector<double>& ent_min_grid,
                                        double grid_step) {
    if (T < 2 || T > 4) throw std::invalid_argument("entropy_bound_oracle: T must be in {2,3,4}");
    if (grid_step <= 0.0 || grid_step > 0.02 + 1e-12)
        throw std::invalid_argument("entropy_bound_oracle: grid_step must be in (0, 0.02]");
    const double max_ent = std::log(double(T));
    for (double e : ent_min_grid)
        if (e > max_ent + 1e-12)
            throw std::invalid_argument("entropy_bound_oracle: ent_min above ln T gives empty S");

    const std::size_t N = std::size_t(std::lround(1.0 / grid_step));
    std::vector<std::vector<double>> pts;
    {
        std::vector<std::size_t> cur;
        enumerate_simplex(T, N, cur, pts);
    }
    // the exact uniform point keeps S nonempty at ent_min == ln T
    if (N % T != 0) pts.push_back(std::vector<double>(T, 1.0 / double(T)));

    std::vector<double> ent(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) ent[i] = entropy_of(pts[i]);

    EntropyBoundResult res;
    res.tokens = T;
    for (double e : ent_min_grid) {
        std::vector<std::size_t> live;
        for (std::size_t i = 0; i < pts.size(); ++i)
            if (ent[i] >= e - 1e-12) live.push_back(i);
        if (live.empty())
            throw std::logic_error("entropy_bound_oracle: empty admissible set");
        double m = 0.0;
        for (std::size_t a = 0; a < live.size(); ++a)
            for (std::size_t b = a + 1; b < live.size(); ++b) {
                double d2 = 0.0;
                const auto& pa = pts[live[a]];
                const auto& pb = pts[live[b]];
                for (std::size_t k = 0; k < T; ++k) {
                    const double dd = pa[k] - pb[k];
                    d2 += dd * dd;
                }
                m = std::max(m, d2);
            }
        res.ent_min.push_back(e);
        res.max_deviation.push_back(std::sqrt(m));
    }
    // Prop: M is nonincreasing in ent_min, and collapses to 0 at ln T
    for (std::size_t i = 0; i + 1 < res.ent_min.size(); ++i)
        if (res.ent_min[i] <= res.ent_min[i + 1] &&
            res.max_deviation[i + 1] > res.max_deviation[i] + 1e-12)
            throw std::logic_error("entropy_bound_oracle: M not nonincreasing");
    for (std::size_t i = 0; i < res.ent_min.size(); ++i)
        if (res.ent_min[i] >= max_ent - 1e-12 && res.max_deviation[i] != 0.0)
            throw std::logic_error("entropy_bound_oracle: M(ln T) must vanish");
    return res;
}

std::vector<double> principal_curvatures(const std::vector<double>& eigenvalues,
                                         double grad_norm) {
    if (grad_norm < 0.0) throw std::invalid_argument("principal_curvatures: negative grad norm");
    const double denom = std::sqrt(1.0 + grad_norm * grad_norm);
    std::vector<double> out;
    out.reserve(eigenvalues.size());
    for (double l : eigenvalues) out.push_back(l / denom);
    return out;
}

}  // namespace attrlab
