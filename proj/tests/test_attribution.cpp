#include "attrlab/attribution.hpp"

#include <cmath>
#include <functional>

#include "attrlab/rng.hpp"
#include "checks.hpp"

using namespace attrlab;

namespace {

Model linear_model(const Tensor& W) {
    ModelSpec s;
    s.kind = ModelKind::mlp;
    s.input_dim = W.cols();
    s.num_classes = W.rows();
    ParamSet ps = init_params(s, 0);
    ps.at("w0").value = W;
    ps.at("b0").value = Tensor::zeros({W.rows()});
    return Model{s, ps};
}

Model smooth_mlp(std::uint64_t seed) {
    ModelSpec s;
    s.kind = ModelKind::mlp;
    s.input_dim = 4;
    s.hidden = {8, 8};
    s.num_classes = 3;
    s.activation = Activation::softplus;
    s.softplus_beta = 1.0;
    return Model{s, init_params(s, seed)};
}

AttentionStack synthetic_stack(Rng& rng, std::size_t layers, std::size_t T) {
    AttentionStack st;
    st.normalized = true;
    st.tokens = T;
    for (std::size_t l = 0; l < layers; ++l) {
        Tensor A = Tensor::zeros({T, T});
        for (std::size_t i = 0; i < T; ++i) {
            double rs = 0;
            for (std::size_t j = 0; j < T; ++j) {
                A.at(i, j) = rng.uniform(0.05, 1.0);
                rs += A.at(i, j);
            }
            for (std::size_t j = 0; j < T; ++j) A.at(i, j) /= rs;
        }
        st.layers.push_back({A});
    }
    return st;
}

// DFS-based Ford-Fulkerson as an independent max-flow reference.
double ff_maxflow(std::vector<std::vector<double>> cap, std::size_t s, std::size_t t) {
    const std::size_t N = cap.size();
    double total = 0.0;
    for (;;) {
        std::vector<bool> seen(N, false);
        std::function<double(std::size_t, double)> dfs = [&](std::size_t u, double lim) -> double {
            if (u == t) return lim;
            seen[u] = true;
            for (std::size_t v = 0; v < N; ++v) {
                if (!seen[v] && cap[u][v] > 1e-12) {
                    double got = dfs(v, std::min(lim, cap[u][v]));
                    if (got > 0) {
                        cap[u][v] -= got;
                        cap[v][u] += got;
                        return got;
                    }
                }
            }
            return 0.0;
        };
        double aug = dfs(s, 1e300);
        if (aug <= 0) break;
        total += aug;
    }
    return total;
}

void test_vanilla_linear_oracle() {
    Rng rng(21);
    Tensor W = rng.normal_tensor({3, 4});
    Model m = linear_model(W);
    Tensor x = rng.normal_tensor({4});
    LogitBundle lb = eval_logits(m, x);
    const std::size_t i = argmax_class(lb.l);

    AttributionMap map = attribute_gradient(m, x, GradientMethod::vanilla);
    // symbolic: grad_x l_i = w_i - W^T p
    Tensor want = Tensor::zeros({4});
    for (std::size_t j = 0; j < 4; ++j) {
        double s = W.at(i, j);
        for (std::size_t k = 0; k < 3; ++k) s -= W.at(k, j) * lb.p.data[k];
        want.data[j] = s;
    }
    CHECK(!map.degenerate);
    for (std::size_t j = 0; j < 4; ++j) CHECK_CLOSE(map.raw.data[j], want.data[j], 1e-10);
    CHECK_CLOSE(norm2(map.unit), 1.0, 1e-12);
}

void test_single_class_degenerate() {
    Model m = linear_model(Tensor({1, 3}, {0.4, -0.2, 0.9}));
    AttributionMap map = attribute_gradient(m, Tensor::vec({1, 2, 3}), GradientMethod::vanilla);
    CHECK(map.degenerate);           // l == 0 identically -> zero map
    CHECK(map.unit.numel() == 0);    // unit field absent
}

void test_integrated_gradients_completeness() {
    Model m = smooth_mlp(17);
    Tensor x = Rng(18).normal_tensor({4});
    const std::size_t i = argmax_class(eval_logits(m, x).l);
    const double lx = eval_logits(m, x).l.data[i];
    const double l0 = eval_logits(m, Tensor::zeros({4})).l.data[i];

    for (auto [steps, tol] : {std::pair<int, double>{32, 1e-2}, {256, 1e-3}}) {
        AttributionMap map =
            attribute_gradient(m, x, GradientMethod::integrated_gradients, i, steps);
        double s = 0;
        for (double v : map.raw.data) s += v;
        const double rel = std::fabs(s - (lx - l0)) / std::max(1e-12, std::fabs(lx - l0));
        CHECK_MSG(rel < tol, "IG completeness rel err " + std::to_string(rel) + " at m=" +
                                 std::to_string(steps));
    }
}

void test_guided_equals_vanilla_on_gelu() {
    Model m = smooth_mlp(23);
    m.spec.activation = Activation::gelu;
    Tensor x = Rng(24).normal_tensor({4});
    AttributionMap v = attribute_gradient(m, x, GradientMethod::vanilla);
    AttributionMap g = attribute_gradient(m, x, GradientMethod::guided_backprop);
    for (std::size_t j = 0; j < 4; ++j) CHECK(v.raw.data[j] == g.raw.data[j]);
}

void test_input_x_grad() {
    Model m = smooth_mlp(29);
    Tensor x = Rng(30).normal_tensor({4});
    const std::size_t i = argmax_class(eval_logits(m, x).l);
    AttributionMap v = attribute_gradient(m, x, GradientMethod::vanilla, i);
    AttributionMap ig = attribute_gradient(m, x, GradientMethod::input_x_grad, i);
    for (std::size_t j = 0; j < 4; ++j)
        CHECK_CLOSE(ig.raw.data[j], x.data[j] * v.raw.data[j], 1e-12);
}

void test_rollout() {
    Rng rng(31);
    AttentionStack st = synthetic_stack(rng, 2, 3);
    Tensor map = attention_token_map(AttentionMethod::rollout, st);

    // explicit product oracle
    auto hatify = [](Tensor A) {
        const std::size_t T = A.rows();
        for (std::size_t i = 0; i < T; ++i) {
            double rs = 0;
            for (std::size_t j = 0; j < T; ++j) {
                A.at(i, j) = 0.5 * A.at(i, j) + (i == j ? 0.5 : 0.0);
                rs += A.at(i, j);
            }
            for (std::size_t j = 0; j < T; ++j) A.at(i, j) /= rs;
        }
        return A;
    };
    Tensor P = matmul(hatify(st.layers[1][0]), hatify(st.layers[0][0]));
    for (std::size_t j = 0; j < 3; ++j) CHECK_CLOSE(map.data[j], P.at(0, j), 1e-12);

    // probability vector when inputs are row-stochastic
    double s = 0;
    for (double v : map.data) {
        CHECK(v >= -1e-15);
        s += v;
    }
    CHECK_CLOSE(s, 1.0, 1e-10);

    // uniform A at depth 1: the residual mixing weights the diagonal, so the
    // map is the CLS row of row-normalized (A + I)/2
    AttentionStack uni;
    uni.normalized = true;
    uni.tokens = 4;
    uni.layers.push_back({Tensor::full({4, 4}, 0.25)});
    Tensor umap = attention_token_map(AttentionMethod::rollout, uni);
    CHECK_CLOSE(umap.data[0], 0.625, 1e-12);
    for (std::size_t j = 1; j < 4; ++j) CHECK_CLOSE(umap.data[j], 0.125, 1e-12);

    // depth 1: raw == mean, and rollout differs only by the residual mixing
    Tensor rmap = attention_token_map(AttentionMethod::raw, uni);
    Tensor mmap = attention_token_map(AttentionMethod::mean, uni);
    Tensor want = matmul(hatify(uni.layers[0][0]), Tensor({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0,
                                                                   1, 0, 0, 0, 0, 1}));
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK_CLOSE(rmap.data[j], mmap.data[j], 1e-15);
        CHECK_CLOSE(umap.data[j], want.at(0, j), 1e-12);
    }
}

void test_flow() {
    // identity attention routes all mass CLS -> CLS
    AttentionStack ident;
    ident.normalized = true;
    ident.tokens = 3;
    Tensor I = Tensor::zeros({3, 3});
    for (std::size_t i = 0; i < 3; ++i) I.at(i, i) = 1.0;
    ident.layers = {{I}, {I}};
    Tensor fmap = attention_token_map(AttentionMethod::flow, ident);
    CHECK_CLOSE(fmap.data[0], 1.0, 1e-12);
    CHECK_CLOSE(fmap.data[1], 0.0, 1e-12);
    CHECK_CLOSE(fmap.data[2], 0.0, 1e-12);

    // random stochastic stack vs the DFS reference
    Rng rng(37);
    AttentionStack st = synthetic_stack(rng, 2, 3);
    Tensor got = attention_token_map(AttentionMethod::flow, st);
    const std::size_t T = 3, L = 2, N = (L + 1) * T;
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<std::vector<double>> cap(N, std::vector<double>(N, 0.0));
        for (std::size_t l = 1; l <= L; ++l)
            for (std::size_t q = 0; q < T; ++q)
                for (std::size_t k = 0; k < T; ++k)
                    cap[l * T + q][(l - 1) * T + k] = st.layers[l - 1][0].at(q, k);
        const double want = ff_maxflow(cap, L * T + 0, t);
        CHECK_CLOSE(got.data[t], want, 1e-9);
    }

    // sanity: flow into token t cannot exceed the capacity entering its sink
    for (std::size_t t = 0; t < T; ++t) {
        double cut = 0;
        for (std::size_t q = 0; q < T; ++q) cut += st.layers[0][0].at(q, t);
        CHECK(got.data[t] <= cut + 1e-9);
    }
}

void test_normalize_map() {
    // 2x2 token grid -> 8x8 input, each value over its 4x4 patch
    Tensor raw = Tensor::vec({0.5, 1.0, 2.0, 3.0, 4.0});  // CLS + 4 tokens
    AttributionMap map = normalize_map(raw, {64}, "att_raw");
    CHECK(!map.degenerate);
    CHECK(map.resized.numel() == 64);
    CHECK_CLOSE(map.resized.data[0], 1.0, 1e-15);          // top-left patch
    CHECK_CLOSE(map.resized.data[7], 2.0, 1e-15);          // top-right patch
    CHECK_CLOSE(map.resized.data[8 * 7 + 7], 4.0, 1e-15);  // bottom-right
    CHECK_CLOSE(norm2(map.unit), 1.0, 1e-12);

    // argmax location preserved
    std::size_t am_r = 0, am_u = 0;
    for (std::size_t i = 1; i < 64; ++i) {
        if (map.resized.data[i] > map.resized.data[am_r]) am_r = i;
        if (map.unit.data[i] > map.unit.data[am_u]) am_u = i;
    }
    CHECK(am_r == am_u);

    // already-unit input is unchanged
    Tensor u = Tensor::vec({0.6, 0.8});
    AttributionMap m2 = normalize_map(u, {2}, "x");
    CHECK_CLOSE(m2.unit.data[0], 0.6, 1e-12);
    CHECK_CLOSE(m2.unit.data[1], 0.8, 1e-12);

    // unit-normalization invariance to positive scaling (exact for powers of 2)
    Rng rng(41);
    Tensor e = rng.normal_tensor({16});
    AttributionMap a = normalize_map(e, {16}, "x");
    AttributionMap b = normalize_map(scale(e, 4.0), {16}, "x");
    for (std::size_t i = 0; i < 16; ++i) CHECK(a.unit.data[i] == b.unit.data[i]);

    // zero map -> degenerate
    AttributionMap z = normalize_map(Tensor::zeros({4}), {4}, "x");
    CHECK(z.degenerate);
}

void test_attention_on_model() {
    ModelSpec s;
    s.kind = ModelKind::vit;
    s.image_side = 8;
    s.patch = 4;
    s.input_dim = 64;
    s.embed_dim = 12;
    s.depth = 2;
    s.heads = 3;
    s.num_classes = 3;
    s.activation = Activation::gelu;
    Model m{s, init_params(s, 51)};
    Tensor img = Rng(52).normal_tensor({64});

    for (AttentionMethod meth : {AttentionMethod::raw, AttentionMethod::mean,
                                 AttentionMethod::rollout, AttentionMethod::flow,
                                 AttentionMethod::attgrad}) {
        AttributionMap map = attribute_attention(m, img, meth);
        CHECK(map.resized.numel() == 64);
        if (!map.degenerate) CHECK_CLOSE(norm2(map.unit), 1.0, 1e-12);
    }

    // kernelized stacks get the evaluation-time softmax for map computation
    ModelSpec ks = s;
    ks.attention = AttentionKind::kernelized;
    ks.attn_phi = Activation::gelu;
    Model km{ks, init_params(ks, 53)};
    AttributionMap kmap = attribute_attention(km, img, AttentionMethod::rollout);
    CHECK(!kmap.degenerate);
    double ssum = 0;
    for (double v : kmap.raw.data) ssum += v;
    CHECK_CLOSE(ssum, 1.0, 1e-10);  // still a probability vector over tokens
}

}  // namespace

int main() {
    test_vanilla_linear_oracle();
    test_single_class_degenerate();
    test_integrated_gradients_completeness();
    test_guided_equals_vanilla_on_gelu();
    test_input_x_grad();
    test_rollout();
    test_flow();
    test_normalize_map();
    test_attention_on_model();
    return testing::finish("attribution");
}
