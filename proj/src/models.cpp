#include "attrlab/models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "attrlab/rng.hpp"

namespace attrlab {

std::string activation_name(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::softplus: return "softplus";
        case Activation::gelu: return "gelu";
        case Activation::elu_plus_one: return "elu_plus_one";
        case Activation::cosine_sim: return "cosine_sim";
    }
    return "?";
}

Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "softplus") return Activation::softplus;
    if (s == "gelu") return Activation::gelu;
    if (s == "elu_plus_one") return Activation::elu_plus_one;
    if (s == "cosine_sim") return Activation::cosine_sim;
    throw std::invalid_argument("unknown activation: " + s);
}

void ModelSpec::validate() const {
    if (num_classes < 1) throw std::invalid_argument("ModelSpec: num_classes < 1");
    if (kind == ModelKind::vit) {
        if (image_side % patch != 0)
            throw std::invalid_argument("ModelSpec: image side not divisible by patch size");
        if (embed_dim % heads != 0)
            throw std::invalid_argument("ModelSpec: embed_dim not divisible by heads");
        if (input_dim != image_side * image_side)
            throw std::invalid_argument("ModelSpec: input_dim != image_side^2");
    }
}

Param& ParamSet::at(const std::string& name) {
    for (auto& [n, p] : items)
        if (n == name) return p;
    throw std::invalid_argument("ParamSet: unknown parameter " + name);
}

const Param& ParamSet::at(const std::string& name) const {
    for (const auto& [n, p] : items)
        if (n == name) return p;
    throw std::invalid_argument("ParamSet: unknown parameter " + name);
}

bool ParamSet::has(const std::string& name) const {
    for (const auto& [n, p] : items)
        if (n == name) return true;
    return false;
}

std::size_t ParamSet::total_size() const {
    std::size_t n = 0;
    for (const auto& [name, p] : items) n += p.value.numel();
    return n;
}

Tensor ParamSet::flatten() const {
    Tensor flat = Tensor::zeros({total_size()});
    std::size_t off = 0;
    for (const auto& [name, p] : items) {
        std::copy(p.value.data.begin(), p.value.data.end(), flat.data.begin() + long(off));
        off += p.value.numel();
    }
    return flat;
}

void ParamSet::unflatten(const Tensor& flat) {
    if (flat.numel() != total_size()) throw std::invalid_argument("unflatten: size mismatch");
    std::size_t off = 0;
    for (auto& [name, p] : items) {
        std::copy(flat.data.begin() + long(off), flat.data.begin() + long(off + p.value.numel()),
                  p.value.data.begin());
        off += p.value.numel();
    }
}

namespace {
void push_param(ParamSet& ps, const std::string& name, Tensor value,
                ParamGroup group = ParamGroup::backbone) {
    ps.items.push_back({name, Param{std::move(value), group, 1.0}});
}
}  // namespace

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(Rng::derive(seed, 0xa77));
    ParamSet ps;
    if (spec.kind == ModelKind::mlp) {
        std::vector<std::size_t> widths;
        widths.push_back(spec.input_dim);
        for (std::size_t w : spec.hidden) widths.push_back(w);
        widths.push_back(spec.num_classes);
        const std::size_t L = widths.size() - 1;
        for (std::size_t l = 0; l < L; ++l) {
            const std::size_t in = widths[l], out = widths[l + 1];
            const double std_w = std::sqrt(2.0 / double(in));
            const ParamGroup grp = (l + 1 == L) ? ParamGroup::classifier : ParamGroup::backbone;
            push_param(ps, "w" + std::to_string(l), rng.normal_tensor({out, in}, std_w), grp);
            if (spec.mlp_bias) push_param(ps, "b" + std::to_string(l), Tensor::zeros({out}), grp);
        }
        return ps;
    }

    const std::size_t D = spec.embed_dim, T = spec.tokens();
    const std::size_t pdim = spec.patch * spec.patch;
    push_param(ps, "embed.w", rng.normal_tensor({pdim, D}, std::sqrt(1.0 / double(pdim))));
    push_param(ps, "embed.b", Tensor::zeros({D}));
    push_param(ps, "cls", rng.normal_tensor({1, D}, 0.02));
    if (spec.use_pos_embed()) push_param(ps, "pos", rng.normal_tensor({T, D}, 0.02));
    const double std_p = std::sqrt(1.0 / double(D));
    for (std::size_t l = 0; l < spec.depth; ++l) {
        const std::string pre = "blk" + std::to_string(l) + ".";
        push_param(ps, pre + "ln1.g", Tensor::full({D}, 1.0));
        push_param(ps, pre + "ln1.b", Tensor::zeros({D}));
        push_param(ps, pre + "wq", rng.normal_tensor({D, D}, std_p));
        push_param(ps, pre + "wk", rng.normal_tensor({D, D}, std_p));
        push_param(ps, pre + "wv", rng.normal_tensor({D, D}, std_p));
        push_param(ps, pre + "wo", rng.normal_tensor({D, D}, std_p));
        push_param(ps, pre + "ln2.g", Tensor::full({D}, 1.0));
        push_param(ps, pre + "ln2.b", Tensor::zeros({D}));
        push_param(ps, pre + "mlp.w1", rng.normal_tensor({D, spec.mlp_ratio * D}, std_p));
        push_param(ps, pre + "mlp.b1", Tensor::zeros({spec.mlp_ratio * D}));
        push_param(ps, pre + "mlp.w2",
                   rng.normal_tensor({spec.mlp_ratio * D, D},
                                     std::sqrt(1.0 / double(spec.mlp_ratio * D))));
        push_param(ps, pre + "mlp.b2", Tensor::zeros({D}));
    }
    push_param(ps, "final_ln.g", Tensor::full({D}, 1.0));
    push_param(ps, "final_ln.b", Tensor::zeros({D}));
    push_param(ps, "head.w", rng.normal_tensor({spec.num_classes, D}, std_p),
               ParamGroup::classifier);
    push_param(ps, "head.b", Tensor::zeros({spec.num_classes}), ParamGroup::classifier);
    return ps;
}

void set_group_multipliers(ParamSet& params, double ratio) {
    if (ratio <= 0.0) throw std::invalid_argument("set_group_multipliers: ratio must be > 0");
    for (auto& [name, p] : params.items)
        p.lr_multiplier = (p.group == ParamGroup::classifier) ? 1.0 / ratio : 1.0;
}

Var BoundParams::at(const std::string& name) const {
    for (const auto& [n, v] : vars)
        if (n == name) return v;
    throw std::invalid_argument("BoundParams: unknown parameter " + name);
}

std::vector<Var> BoundParams::all() const {
    std::vector<Var> out;
    out.reserve(vars.size());
    for (const auto& [n, v] : vars) out.push_back(v);
    return out;
}

BoundParams bind_params(DiffGraph& g, const ParamSet& params) {
    BoundParams bp;
    for (const auto& [name, p] : params.items) bp.vars.push_back({name, g.input(p.value)});
    return bp;
}

std::pair<Var, BoundParams> bind_params_flat(DiffGraph& g, const ParamSet& params) {
    Var flat = g.input(params.flatten());
    BoundParams bp;
    std::size_t off = 0;
    for (const auto& [name, p] : params.items) {
        const std::size_t n = p.value.numel();
        std::vector<std::size_t> idx(n);
        for (std::size_t k = 0; k < n; ++k) idx[k] = off + k;
        bp.vars.push_back({name, g.gather(flat, std::move(idx), p.value.shape)});
        off += n;
    }
    return {flat, bp};
}

Var apply_activation(DiffGraph& g, Var x, Activation act, double beta) {
    switch (act) {
        case Activation::relu: return g.relu(x);
        case Activation::softplus: return g.softplus(x, beta);
        case Activation::gelu: return g.gelu(x);
        case Activation::elu_plus_one: return g.elu_plus_one(x);
        case Activation::cosine_sim:
            throw std::invalid_argument("cosine_sim is not a pointwise activation");
    }
    throw std::logic_error("apply_activation: unhandled");
}

Var layer_norm(DiffGraph& g, Var x, Var gamma, Var beta_v) {
    const std::size_t T = x.val().rows(), D = x.val().cols();
    Var mu = g.affine(g.row_sum(x), 1.0 / double(D), 0.0);
    Var c = g.sub(x, g.repeat_cols(mu, D));
    Var var = g.affine(g.row_sum(g.mul(c, c)), 1.0 / double(D), 0.0);
    Var stddev = g.sqrt(g.affine(var, 1.0, 1e-6));
    Var normed = g.div(c, g.repeat_cols(stddev, D));
    return g.add(g.mul(normed, g.repeat_rows(gamma, T)), g.repeat_rows(beta_v, T));
}

Forward mlp_forward(DiffGraph& g, const ModelSpec& spec, const BoundParams& p, Var x) {
    if (x.val().numel() != spec.input_dim)
        throw std::invalid_argument("mlp_forward: input shape mismatch");
    Forward f;
    Var h = x;
    const std::size_t L = spec.hidden.size() + 1;
    for (std::size_t l = 0; l < L; ++l) {
        f.layer_inputs.push_back(h);
        Var z = g.matvec(p.at("w" + std::to_string(l)), h);
        if (spec.mlp_bias) z = g.add(z, p.at("b" + std::to_string(l)));
        h = (l + 1 == L) ? z : apply_activation(g, z, spec.activation, spec.softplus_beta);
    }
    f.logits = h;
    f.log_probs = g.log_probs(h);
    return f;
}

Var mlp_logits_batch(DiffGraph& g, const ModelSpec& spec, const BoundParams& p, Var X) {
    if (X.val().cols() != spec.input_dim)
        throw std::invalid_argument("mlp_logits_batch: input shape mismatch");
    Var H = X;
    const std::size_t L = spec.hidden.size() + 1;
    for (std::size_t l = 0; l < L; ++l) {
        Var W = p.at("w" + std::to_string(l));
        Var Z = g.matmul(H, g.transpose(W));
        if (spec.mlp_bias)
            Z = g.add(Z, g.repeat_rows(p.at("b" + std::to_string(l)), Z.val().rows()));
        H = (l + 1 == L) ? Z : apply_activation(g, Z, spec.activation, spec.softplus_beta);
    }
    return H;
}

namespace {
Var row_l2_normalize(DiffGraph& g, Var M) {
    const Tensor t = M.val();
    for (std::size_t i = 0; i < t.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < t.cols(); ++j) s += t.at(i, j) * t.at(i, j);
        if (s == 0.0) throw std::invalid_argument("cosine_sim: zero row has no direction");
    }
    const std::size_t cols = t.cols();
    Var nrm = g.sqrt(g.row_sum(g.mul(M, M)));
    return g.div(M, g.repeat_cols(nrm, cols));
}

Var phi_map(DiffGraph& g, Var M, Activation phi, double beta) {
    if (phi == Activation::cosine_sim) return row_l2_normalize(g, M);
    return apply_activation(g, M, phi, beta);
}
}  // namespace

std::pair<Var, Var> softmax_attention_nodes(DiffGraph& g, Var Q, Var K, Var V) {
    const std::size_t hd = Q.val().cols();
    if (K.val().cols() != hd || V.val().rows() != K.val().rows() ||
        Q.val().rows() != K.val().rows())
        throw std::invalid_argument("softmax_attention: shape mismatch");
    Var scores = g.affine(g.matmul(Q, g.transpose(K)), 1.0 / std::sqrt(double(hd)), 0.0);
    Var A = g.row_softmax(scores);
    return {g.matmul(A, V), A};
}

std::pair<Var, Var> kernelized_attention_nodes(DiffGraph& g, Var Q, Var K, Var V, Activation phi,
                                               double beta) {
    Var A = g.matmul(phi_map(g, Q, phi, beta), g.transpose(phi_map(g, K, phi, beta)));
    return {g.matmul(A, V), A};
}

std::pair<Tensor, Tensor> softmax_attention(const Tensor& Q, const Tensor& K, const Tensor& V) {
    DiffGraph g;
    auto [out, A] = softmax_attention_nodes(g, g.input(Q), g.input(K), g.input(V));
    return {out.val(), A.val()};
}

std::pair<Tensor, Tensor> kernelized_attention(const Tensor& Q, const Tensor& K, const Tensor& V,
                                               Activation phi, double beta) {
    DiffGraph g;
    auto [out, A] = kernelized_attention_nodes(g, g.input(Q), g.input(K), g.input(V), phi, beta);
    return {out.val(), A.val()};
}

Forward vit_forward(DiffGraph& g, const ModelSpec& spec, const BoundParams& p, Var image) {
    spec.validate();
    if (image.val().numel() != spec.input_dim)
        throw std::invalid_argument("vit_forward: image shape mismatch");

    const std::size_t S = spec.image_side, P = spec.patch, D = spec.embed_dim;
    const std::size_t pps = spec.patches_per_side(), np = spec.num_patches(), T = np + 1;
    const std::size_t heads = spec.heads, dh = D / heads;

    // patchify: row-major pixels -> {num_patches, patch*patch}
    std::vector<std::size_t> idx;
    idx.reserve(np * P * P);
    for (std::size_t pi = 0; pi < pps; ++pi)
        for (std::size_t pj = 0; pj < pps; ++pj)
            for (std::size_t a = 0; a < P; ++a)
                for (std::size_t b = 0; b < P; ++b)
                    idx.push_back((pi * P + a) * S + pj * P + b);
    Var patches = g.gather(image, std::move(idx), {np, P * P});

    Var tokens = g.add(g.matmul(patches, p.at("embed.w")), g.repeat_rows(p.at("embed.b"), np));
    tokens = g.concat_rows(p.at("cls"), tokens);
    if (spec.use_pos_embed()) tokens = g.add(tokens, p.at("pos"));

    Forward f;
    for (std::size_t l = 0; l < spec.depth; ++l) {
        const std::string pre = "blk" + std::to_string(l) + ".";
        Var u = layer_norm(g, tokens, p.at(pre + "ln1.g"), p.at(pre + "ln1.b"));
        Var Q = g.matmul(u, p.at(pre + "wq"));
        Var K = g.matmul(u, p.at(pre + "wk"));
        Var V = g.matmul(u, p.at(pre + "wv"));
        std::vector<Var> layer_attn;
        Var attn_out{nullptr, -1};
        Var Wo = p.at(pre + "wo");
        for (std::size_t h = 0; h < heads; ++h) {
            auto head_slice = [&](Var M) {
                std::vector<std::size_t> hidx;
                hidx.reserve(T * dh);
                for (std::size_t i = 0; i < T; ++i)
                    for (std::size_t j = 0; j < dh; ++j) hidx.push_back(i * D + h * dh + j);
                return g.gather(M, std::move(hidx), {T, dh});
            };
            Var Qh = head_slice(Q), Kh = head_slice(K), Vh = head_slice(V);
            auto [oh, A] = (spec.attention == AttentionKind::softmax)
                               ? softmax_attention_nodes(g, Qh, Kh, Vh)
                               : kernelized_attention_nodes(g, Qh, Kh, Vh, spec.attn_phi,
                                                            spec.attn_phi_beta);
            layer_attn.push_back(A);
            // heads recombine through per-head row blocks of the output projection
            Var oproj = g.matmul(oh, g.slice_rows(Wo, h * dh, (h + 1) * dh));
            attn_out = (h == 0) ? oproj : g.add(attn_out, oproj);
        }
        f.attn.push_back(std::move(layer_attn));
        tokens = g.add(tokens, attn_out);

        Var v2 = layer_norm(g, tokens, p.at(pre + "ln2.g"), p.at(pre + "ln2.b"));
        Var m1 = g.add(g.matmul(v2, p.at(pre + "mlp.w1")), g.repeat_rows(p.at(pre + "mlp.b1"), T));
        Var m1a = apply_activation(g, m1, spec.activation, spec.softplus_beta);
        Var m2 = g.add(g.matmul(m1a, p.at(pre + "mlp.w2")), g.repeat_rows(p.at(pre + "mlp.b2"), T));
        tokens = g.add(tokens, m2);
    }

    Var fin = layer_norm(g, tokens, p.at("final_ln.g"), p.at("final_ln.b"));
    Var cls = g.reshape(g.slice_rows(fin, 0, 1), {D});
    f.logits = g.add(g.matvec(p.at("head.w"), cls), p.at("head.b"));
    f.log_probs = g.log_probs(f.logits);
    return f;
}

Forward model_forward(DiffGraph& g, const ModelSpec& spec, const BoundParams& p, Var x) {
    return spec.kind == ModelKind::mlp ? mlp_forward(g, spec, p, x) : vit_forward(g, spec, p, x);
}

LogitBundle eval_logits(const Model& model, const Tensor& x) {
    DiffGraph g;
    BoundParams bp = bind_params(g, model.params);
    Forward f = model_forward(g, model.spec, bp, g.input(x));
    LogitBundle lb;
    lb.z = f.logits.val();
    lb.l = f.log_probs.val();
    lb.lse = lse_value(lb.z);
    lb.p = lb.l;
    for (double& v : lb.p.data) v = std::exp(v);
    return lb;
}

std::size_t argmax_class(const Tensor& log_probs) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < log_probs.numel(); ++i)
        if (log_probs.data[i] > log_probs.data[best]) best = i;
    return best;
}

std::vector<Tensor> AttentionStack::head_mean() const {
    std::vector<Tensor> out;
    out.reserve(layers.size());
    for (const auto& heads_l : layers) {
        Tensor m = Tensor::zeros(heads_l.front().shape);
        for (const Tensor& h : heads_l) m = attrlab::add(m, h);
        out.push_back(scale(m, 1.0 / double(heads_l.size())));
    }
    return out;
}

AttentionStack extract_stack(const DiffGraph& g, const Forward& f, const ModelSpec& spec) {
    AttentionStack st;
    st.normalized = (spec.attention == AttentionKind::softmax);
    st.tokens = spec.tokens();
    for (const auto& layer : f.attn) {
        std::vector<Tensor> hs;
        hs.reserve(layer.size());
        for (Var a : layer) hs.push_back(g.value(a.id));
        st.layers.push_back(std::move(hs));
    }
    return st;
}

AttentionStack eval_stack(const Model& model, const Tensor& x) {
    DiffGraph g;
    BoundParams bp = bind_params(g, model.params);
    Forward f = model_forward(g, model.spec, bp, g.input(x));
    return extract_stack(g, f, model.spec);
}

}  // namespace attrlab
