#include "attrlab/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <stdexcept>

namespace attrlab {

std::string method_name(GradientMethod m) {
    switch (m) {
        case GradientMethod::vanilla: return "vanilla";
        case GradientMethod::input_x_grad: return "input_x_grad";
        case GradientMethod::integrated_gradients: return "integrated_gradients";
        case GradientMethod::guided_backprop: return "guided_backprop";
    }
    return "?";
}

std::string method_name(AttentionMethod m) {
    switch (m) {
        case AttentionMethod::raw: return "att_raw";
        case AttentionMethod::mean: return "att_mean";
        case AttentionMethod::rollout: return "att_rollout";
        case AttentionMethod::flow: return "att_flow";
        case AttentionMethod::attgrad: return "att_grad";
    }
    return "?";
}

GradientMethod gradient_method_from_name(const std::string& s) {
    if (s == "vanilla") return GradientMethod::vanilla;
    if (s == "input_x_grad") return GradientMethod::input_x_grad;
    if (s == "integrated_gradients") return GradientMethod::integrated_gradients;
    if (s == "guided_backprop") return GradientMethod::guided_backprop;
    throw std::invalid_argument("unknown gradient method: " + s);
}

std::pair<Var, Forward> gradient_attribution_with_forward(DiffGraph& g, const ForwardFn& fwd,
                                                          Var x, GradientMethod method,
                                                          std::size_t cls, int ig_steps) {
    Forward f = fwd(g, x);
    switch (method) {
        case GradientMethod::vanilla:
            return {g.grad(g.pick(f.log_probs, cls), {x})[0], f};
        case GradientMethod::input_x_grad:
            return {g.mul(x, g.grad(g.pick(f.log_probs, cls), {x})[0]), f};
        case GradientMethod::guided_backprop:
            return {g.grad(g.pick(f.log_probs, cls), {x}, GradRule::guided)[0], f};
        case GradientMethod::integrated_gradients: {
            // zero baseline, midpoint rule
            Var acc{nullptr, -1};
            for (int k = 1; k <= ig_steps; ++k) {
                const double c = (double(k) - 0.5) / double(ig_steps);
                Var xk = g.affine(x, c, 0.0);
                Forward fk = fwd(g, xk);
                Var gk = g.grad(g.pick(fk.log_probs, cls), {xk})[0];
                acc = (k == 1) ? gk : g.add(acc, gk);
            }
            return {g.mul(x, g.affine(acc, 1.0 / double(ig_steps), 0.0)), f};
        }
    }
    throw std::logic_error("gradient_attribution_nodes: unhandled method");
}

Var gradient_attribution_nodes_fn(DiffGraph& g, const ForwardFn& fwd, Var x,
                                  GradientMethod method, std::size_t cls, int ig_steps) {
    return gradient_attribution_with_forward(g, fwd, x, method, cls, ig_steps).first;
}

Var gradient_attribution_nodes(DiffGraph& g, const ModelSpec& spec, const BoundParams& p, Var x,
                               GradientMethod method, std::size_t cls, int ig_steps) {
    ForwardFn fwd = [&spec, &p](DiffGraph& gg, Var xx) { return model_forward(gg, spec, p, xx); };
    return gradient_attribution_nodes_fn(g, fwd, x, method, cls, ig_steps);
}

AttributionMap normalize_map(const Tensor& raw, const std::vector<std::size_t>& target_shape,
                             const std::string& method) {
    AttributionMap out;
    out.method = method;
    out.raw = raw;
    const std::size_t target_n = Tensor::numel_of(target_shape);
    if (raw.numel() == target_n) {
        out.resized = raw;
        out.resized.shape = target_shape;
    } else {
        // token vector with CLS at position 0 -> spatial grid -> nearest neighbor
        if (raw.rank() != 1 || raw.numel() < 2)
            throw std::invalid_argument("normalize_map: expected a token vector");
        const std::size_t tok = raw.numel() - 1;
        const std::size_t grid = std::size_t(std::lround(std::sqrt(double(tok))));
        if (grid * grid != tok)
            throw std::invalid_argument("normalize_map: token count is not a square grid");
        const std::size_t side = std::size_t(std::lround(std::sqrt(double(target_n))));
        if (side * side != target_n || side % grid != 0)
            throw std::invalid_argument("normalize_map: input side incompatible with token grid");
        const std::size_t rep = side / grid;
        Tensor resized = Tensor::zeros(target_shape);
        for (std::size_t i = 0; i < side; ++i)
            for (std::size_t j = 0; j < side; ++j)
                resized.data[i * side + j] = raw.data[1 + (i / rep) * grid + (j / rep)];
        out.resized = std::move(resized);
    }
    const double n = norm2(out.resized);
    if (n > 0.0) {
        out.unit = scale(out.resized, 1.0 / n);
    } else {
        out.degenerate = true;
    }
    return out;
}

AttributionMap attribute_gradient(const Model& model, const Tensor& x, GradientMethod method,
                                  std::optional<std::size_t> cls, int ig_steps) {
    DiffGraph g;
    BoundParams bp = bind_params(g, model.params);
    std::size_t i = 0;
    if (cls.has_value()) {
        i = *cls;
    } else {
        Forward probe = model_forward(g, model.spec, bp, g.input(x));
        i = argmax_class(probe.log_probs.val());
    }
    Var xv = g.input(x);
    Var e = gradient_attribution_nodes(g, model.spec, bp, xv, method, i, ig_steps);
    return normalize_map(e.val(), x.shape, method_name(method));
}

namespace {

Tensor head_mean_normalized(const AttentionStack& stack, std::size_t layer) {
    Tensor m = stack.head_mean()[layer];
    if (!stack.normalized) {
        // evaluation-time softmax keeps rollout/entropy on the simplex
        DiffGraph g;
        m = g.row_softmax(g.input(m)).val();
    }
    return m;
}

Tensor cls_row(const Tensor& A) {
    Tensor out = Tensor::zeros({A.cols()});
    for (std::size_t j = 0; j < A.cols(); ++j) out.data[j] = A.at(0, j);
    return out;
}

Tensor rollout_matrix(const AttentionStack& stack) {
    const std::size_t T = stack.tokens;
    Tensor P;
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        Tensor A = head_mean_normalized(stack, l);
        // residual mixing then row renormalization
        for (std::size_t i = 0; i < T; ++i) {
            double rs = 0;
            for (std::size_t j = 0; j < T; ++j) {
                A.at(i, j) = 0.5 * A.at(i, j) + (i == j ? 0.5 : 0.0);
                rs += A.at(i, j);
            }
            for (std::size_t j = 0; j < T; ++j) A.at(i, j) /= rs;
        }
        P = (l == 0) ? A : matmul(A, P);
    }
    return P;
}

}  // namespace

Tensor attention_flow_map(const std::vector<Tensor>& layer_capacities) {
    const std::size_t L = layer_capacities.size();
    const std::size_t T = layer_capacities.front().rows();
    const std::size_t N = (L + 1) * T;
    auto vid = [T](std::size_t level, std::size_t tok) { return level * T + tok; };

    // capacity[u][v]: downward edges (level l, q) -> (level l-1, k) with A_l[q,k]
    std::vector<std::vector<double>> base(N, std::vector<double>(N, 0.0));
    for (std::size_t l = 1; l <= L; ++l) {
        const Tensor& A = layer_capacities[l - 1];
        for (std::size_t q = 0; q < T; ++q)
            for (std::size_t k = 0; k < T; ++k) base[vid(l, q)][vid(l - 1, k)] = A.at(q, k);
    }

    const std::size_t source = vid(L, 0);  // CLS at the top layer
    Tensor map = Tensor::zeros({T});
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<std::vector<double>> cap = base;
        const std::size_t sink = vid(0, t);
        double flow = 0.0;
        // Edmonds-Karp
        for (;;) {
            std::vector<int> prev(N, -1);
            prev[source] = int(source);
            std::deque<std::size_t> q{source};
            while (!q.empty() && prev[sink] < 0) {
                std::size_t u = q.front();
                q.pop_front();
                for (std::size_t v = 0; v < N; ++v)
                    if (prev[v] < 0 && cap[u][v] > 1e-12) {
                        prev[v] = int(u);
                        q.push_back(v);
                    }
            }
            if (prev[sink] < 0) break;
            double aug = 1e300;
            for (std::size_t v = sink; v != source; v = std::size_t(prev[v]))
                aug = std::min(aug, cap[std::size_t(prev[v])][v]);
            for (std::size_t v = sink; v != source; v = std::size_t(prev[v])) {
                cap[std::size_t(prev[v])][v] -= aug;
                cap[v][std::size_t(prev[v])] += aug;
            }
            flow += aug;
        }
        map.data[t] = flow;
    }
    return map;
}

Tensor attention_token_map(AttentionMethod method, const AttentionStack& stack) {
    if (stack.layers.empty()) throw std::invalid_argument("attention_token_map: empty stack");
    const std::size_t L = stack.layers.size();
    switch (method) {
        case AttentionMethod::raw:
            return cls_row(head_mean_normalized(stack, L - 1));
        case AttentionMethod::mean: {
            Tensor m = head_mean_normalized(stack, 0);
            for (std::size_t l = 1; l < L; ++l) m = add(m, head_mean_normalized(stack, l));
            return cls_row(scale(m, 1.0 / double(L)));
        }
        case AttentionMethod::rollout:
            return cls_row(rollout_matrix(stack));
        case AttentionMethod::flow: {
            std::vector<Tensor> caps;
            caps.reserve(L);
            for (std::size_t l = 0; l < L; ++l) caps.push_back(head_mean_normalized(stack, l));
            return attention_flow_map(caps);
        }
        case AttentionMethod::attgrad:
            throw std::invalid_argument("attgrad needs model gradients; use attribute_attention");
    }
    throw std::logic_error("attention_token_map: unhandled method");
}

AttributionMap attribute_attention(const Model& model, const Tensor& x, AttentionMethod method,
                                   std::optional<std::size_t> cls) {
    if (model.spec.kind != ModelKind::vit)
        throw std::invalid_argument("attribute_attention: ViT model required");
    DiffGraph g;
    BoundParams bp = bind_params(g, model.params);
    Forward f = vit_forward(g, model.spec, bp, g.input(x));
    const std::size_t i = cls.has_value() ? *cls : argmax_class(f.log_probs.val());

    if (method == AttentionMethod::attgrad) {
        // mean over layers and heads of relu(A .* dl_i/dA), CLS row
        std::vector<Var> wrt;
        for (const auto& layer : f.attn)
            for (Var a : layer) wrt.push_back(a);
        std::vector<Var> grads = g.grad(g.pick(f.log_probs, i), wrt);
        const std::size_t T = model.spec.tokens();
        Tensor acc = Tensor::zeros({T, T});
        for (std::size_t k = 0; k < wrt.size(); ++k) {
            Tensor prod = mul(wrt[k].val(), grads[k].val());
            for (double& v : prod.data) v = v > 0 ? v : 0;
            acc = add(acc, prod);
        }
        acc = scale(acc, 1.0 / double(wrt.size()));
        Tensor raw = cls_row(acc);
        return normalize_map(raw, x.shape, method_name(method));
    }

    AttentionStack stack = extract_stack(g, f, model.spec);
    Tensor raw = attention_token_map(method, stack);
    return normalize_map(raw, x.shape, method_name(method));
}

void write_map_csv(const std::string& path, const AttributionMap& map, std::size_t side) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_map_csv: cannot open " + path);
    const Tensor& t = map.degenerate ? map.resized : map.unit;
    char buf[64];
    for (std::size_t i = 0; i < side; ++i) {
        for (std::size_t j = 0; j < side; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", t.data[i * side + j]);
            os << (j ? "," : "") << buf;
        }
        os << "\n";
    }
}

void write_map_pgm(const std::string& path, const AttributionMap& map, std::size_t side) {
    const Tensor& t = map.degenerate ? map.resized : map.unit;
    double lo = t.data[0], hi = t.data[0];
    for (double v : t.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = (hi > lo) ? hi - lo : 1.0;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_map_pgm: cannot open " + path);
    os << "P5\n" << side << " " << side << "\n255\n";
    for (std::size_t i = 0; i < side * side; ++i) {
        unsigned char px = static_cast<unsigned char>(255.0 * (t.data[i] - lo) / span);
        os.write(reinterpret_cast<const char*>(&px), 1);
    }
}

}  // namespace attrlab
