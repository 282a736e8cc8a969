#include "attrlab/training.hpp"

#include <cmath>
#include <cstdio>

#include "attrlab/rng.hpp"
#include "checks.hpp"

using namespace attrlab;

namespace {

Model linear_classifier(std::size_t dim, std::size_t classes, std::uint64_t seed) {
    ModelSpec s;
    s.kind = ModelKind::mlp;
    s.input_dim = dim;
    s.num_classes = classes;
    return Model{s, init_params(s, seed)};
}

Model small_mlp(std::uint64_t seed, Activation act = Activation::relu) {
    ModelSpec s;
    s.kind = ModelKind::mlp;
    s.input_dim = 4;
    s.hidden = {8};
    s.num_classes = 3;
    s.activation = act;
    return Model{s, init_params(s, seed)};
}

double final_grad_norm(const Model& m, const Dataset& ds) {
    DiffGraph g;
    BoundParams bp = bind_params(g, m.params);
    Var X = g.input(ds.inputs);
    Var Z = mlp_logits_batch(g, m.spec, bp, X);
    const std::size_t B = ds.size(), d = m.spec.num_classes;
    std::vector<std::size_t> idx(B);
    for (std::size_t b = 0; b < B; ++b) idx[b] = b * d + std::size_t(ds.labels[b]);
    Var zy = g.gather(Z, std::move(idx), {B});
    Var nll = g.affine(g.sum(g.sub(g.row_lse(Z), zy)), 1.0 / double(B), 0.0);
    std::vector<Var> grads = g.grad(nll, bp.all());
    double acc = 0;
    for (Var v : grads) acc += dot(v.val(), v.val());
    return std::sqrt(acc);
}

void test_convex_convergence() {
    DataSplit data = make_blobs(40, 2, 2, 0.1, 3);  // nearly separable
    Model m = linear_classifier(2, 2, 4);
    TrainConfig cfg;
    cfg.base_lr = 1.0;
    cfg.stop_loss_threshold = 5e-4;
    cfg.max_epochs = 2000;
    cfg.batch_size = 16;
    cfg.seed = 5;
    TrainResult res = sgd_train(m, data, cfg);
    CHECK(res.trace.stop == StopReason::loss_threshold);
    CHECK(res.trace.epochs.back().train_loss < 5e-4);
    CHECK_MSG(final_grad_norm(res.model, data.train) < 1e-3,
              "final grad norm " + std::to_string(final_grad_norm(res.model, data.train)));
    CHECK(accuracy(res.model, data.val) > 0.95);
}

void test_lr_decay_trace() {
    DataSplit data = make_blobs(20, 2, 3, 0.5, 7);
    Model m = small_mlp(8);
    m.spec.input_dim = 3;
    m.params = init_params(m.spec, 8);
    TrainConfig cfg;
    cfg.base_lr = 0.1;
    cfg.max_epochs = 50;
    cfg.stop_loss_threshold = 0.0;  // never stops early
    cfg.seed = 9;
    TrainResult res = sgd_train(m, data, cfg);
    CHECK(res.trace.epochs.size() == 50);
    for (const auto& row : res.trace.epochs) {
        const double want = 0.1 * std::pow(1.0 - 1e-3, double(row.epoch));
        CHECK_MSG(std::fabs(row.lr - want) <= 1e-15,
                  "lr at epoch " + std::to_string(row.epoch) + " off by " +
                      std::to_string(row.lr - want));
    }
}

void test_icr_dagger_step_sizes() {
    DataSplit data = make_blobs(20, 3, 4, 0.5, 11);
    Model m = small_mlp(12);
    TrainConfig cfg;
    cfg.strategy = Strategy::icr_dagger;
    cfg.base_lr = 0.1;
    cfg.lr_ratio = 10.0;
    cfg.max_epochs = 2;
    cfg.stop_loss_threshold = 0.0;
    TrainResult res = sgd_train(m, data, cfg);
    CHECK(!res.trace.step_log.empty());
    for (const auto& sl : res.trace.step_log) {
        CHECK_MSG(std::fabs(sl.classifier_lr * 10.0 - sl.backbone_lr) <=
                      1e-15 * std::fabs(sl.backbone_lr) * 10.0,
                  "classifier step not 10x smaller");
    }
    // plain icr keeps groups uniform
    TrainConfig cfg2 = cfg;
    cfg2.strategy = Strategy::icr;
    TrainResult res2 = sgd_train(m, data, cfg2);
    for (const auto& sl : res2.trace.step_log) CHECK(sl.classifier_lr == sl.backbone_lr);
}

void test_ecr_penalty() {
    Model m = small_mlp(13, Activation::softplus);
    Tensor x = Rng(14).normal_tensor({4});
    CHECK_CLOSE(ecr_penalty(m, x, 0, 0.0), 0.0, 1e-15);

    // constant model: zero input gradient
    Model cz = linear_classifier(4, 3, 15);
    for (double& v : cz.params.at("w0").value.data) v = 0;
    CHECK_CLOSE(ecr_penalty(cz, x, 1, 0.7), 0.0, 1e-18);

    // linear model symbolic oracle: ||w_y - W^T p||^2
    Model lin = linear_classifier(4, 3, 16);
    const std::size_t y = 2;
    LogitBundle lb = eval_logits(lin, x);
    const Tensor& W = lin.params.at("w0").value;
    Tensor want = Tensor::zeros({4});
    for (std::size_t j = 0; j < 4; ++j) {
        double s = W.at(y, j);
        for (std::size_t k = 0; k < 3; ++k) s -= W.at(k, j) * lb.p.data[k];
        want.data[j] = s;
    }
    CHECK_CLOSE(ecr_penalty(lin, x, y, 0.3), 0.3 * dot(want, want), 1e-10);
}

void test_atr_perturb() {
    Model m = small_mlp(17, Activation::softplus);
    Tensor x = Rng(18).normal_tensor({4});
    Tensor same = atr_perturb(m, x, 0, 0.0);
    for (std::size_t j = 0; j < 4; ++j) CHECK(same.data[j] == x.data[j]);

    // 1-D logistic: perturbation moves against the margin and raises the loss
    Model lo = linear_classifier(1, 2, 19);
    lo.params.at("w0").value = Tensor({2, 1}, {1.0, -1.0});
    Tensor x1 = Tensor::vec({0.8});  // label 0 favored
    const double before = -eval_logits(lo, x1).l.data[0];
    Tensor x1p = atr_perturb(lo, x1, 0, 0.3);
    CHECK(x1p.data[0] < x1.data[0]);  // moves toward the boundary
    const double after = -eval_logits(lo, x1p).l.data[0];
    CHECK(after >= before);

    // ascent property across random nets
    int ok = 0, n = 0;
    for (int t = 0; t < 50; ++t) {
        Model mm = small_mlp(100 + std::uint64_t(t), Activation::softplus);
        Tensor xx = Rng(200 + std::uint64_t(t)).normal_tensor({4});
        const std::size_t lbl = std::size_t(t % 3);
        const double l_before = -eval_logits(mm, xx).l.data[lbl];
        Tensor xp = atr_perturb(mm, xx, lbl, 0.2);
        const double l_after = -eval_logits(mm, xp).l.data[lbl];
        ++n;
        if (l_after >= l_before - 1e-12) ++ok;
    }
    CHECK_MSG(ok >= int(0.99 * n), "atr ascent " + std::to_string(ok) + "/" + std::to_string(n));
}

void test_sam_step() {
    DataSplit data = make_blobs(10, 3, 4, 0.5, 21);
    Dataset batch = data.train;

    // rho = 0 is bitwise the plain SGD step
    Model a = small_mlp(22);
    Model b = small_mlp(22);
    sam_step(a, batch, 0.0, 0.05);
    sgd_step(b, batch, 0.05);
    for (std::size_t i = 0; i < a.params.items.size(); ++i) {
        const Tensor& ta = a.params.items[i].second.value;
        const Tensor& tb = b.params.items[i].second.value;
        for (std::size_t k = 0; k < ta.numel(); ++k) CHECK(ta.data[k] == tb.data[k]);
    }

    // closed-form replication: descend with the gradient taken at theta + rho g/||g||
    Model c = small_mlp(22);
    Model manual = small_mlp(22);
    const double rho = 0.1, lr = 0.05;
    sam_step(c, batch, rho, lr);
    {
        // first pass
        Model probe = manual;
        DiffGraph g;
        BoundParams bp = bind_params(g, probe.params);
        Var X = g.input(batch.inputs);
        Var Z = mlp_logits_batch(g, probe.spec, bp, X);
        const std::size_t B = batch.size(), d = probe.spec.num_classes;
        std::vector<std::size_t> idx(B);
        for (std::size_t q = 0; q < B; ++q) idx[q] = q * d + std::size_t(batch.labels[q]);
        Var zy = g.gather(Z, std::move(idx), {B});
        Var nll = g.affine(g.sum(g.sub(g.row_lse(Z), zy)), 1.0 / double(B), 0.0);
        std::vector<Var> g1 = g.grad(nll, bp.all());
        double gn = 0;
        for (Var v : g1) gn += dot(v.val(), v.val());
        gn = std::sqrt(gn);
        Model ascended = manual;
        for (std::size_t i = 0; i < ascended.params.items.size(); ++i)
            for (std::size_t k = 0; k < ascended.params.items[i].second.value.numel(); ++k)
                ascended.params.items[i].second.value.data[k] += rho * g1[i].val().data[k] / gn;
        // second pass at the ascended point
        DiffGraph g2;
        BoundParams bp2 = bind_params(g2, ascended.params);
        Var X2 = g2.input(batch.inputs);
        Var Z2 = mlp_logits_batch(g2, ascended.spec, bp2, X2);
        std::vector<std::size_t> idx2(B);
        for (std::size_t q = 0; q < B; ++q) idx2[q] = q * d + std::size_t(batch.labels[q]);
        Var zy2 = g2.gather(Z2, std::move(idx2), {B});
        Var nll2 = g2.affine(g2.sum(g2.sub(g2.row_lse(Z2), zy2)), 1.0 / double(B), 0.0);
        std::vector<Var> g2s = g2.grad(nll2, bp2.all());
        for (std::size_t i = 0; i < manual.params.items.size(); ++i)
            for (std::size_t k = 0; k < manual.params.items[i].second.value.numel(); ++k)
                manual.params.items[i].second.value.data[k] -= lr * g2s[i].val().data[k];
    }
    for (std::size_t i = 0; i < c.params.items.size(); ++i) {
        const Tensor& tc = c.params.items[i].second.value;
        const Tensor& tm = manual.params.items[i].second.value;
        for (std::size_t k = 0; k < tc.numel(); ++k) CHECK_CLOSE(tc.data[k], tm.data[k], 1e-15);
    }
}

void test_activation_swap() {
    // softplus(beta x) approaches relu; analytic bound ln2/beta at x = 0
    const double beta = 30.0;
    double worst = 0;
    for (double x = -5; x <= 5; x += 0.01) {
        DiffGraph g;
        const double sp = g.softplus(g.input(Tensor::scalar(x)), beta).val().data[0];
        worst = std::max(worst, std::fabs(sp - std::max(0.0, x)));
    }
    CHECK_MSG(worst < 0.024, "softplus deviation " + std::to_string(worst));
    CHECK(worst <= std::log(2.0) / beta + 1e-12);

    // PAR leaves every weight bitwise identical
    Model m = small_mlp(23);
    SwapResult post = activation_swap(m, Activation::softplus, 3.0, SwapMode::post);
    CHECK(post.swapped);
    CHECK(post.model.spec.activation == Activation::softplus);
    for (std::size_t i = 0; i < m.params.items.size(); ++i) {
        const Tensor& ta = m.params.items[i].second.value;
        const Tensor& tb = post.model.params.items[i].second.value;
        for (std::size_t k = 0; k < ta.numel(); ++k) CHECK(ta.data[k] == tb.data[k]);
    }

    // no ReLU sites: no-op with the flag cleared
    Model gm = small_mlp(24, Activation::gelu);
    SwapResult noop = activation_swap(gm, Activation::softplus, 1.0, SwapMode::ante);
    CHECK(!noop.swapped);

    // AAR smoke: swapped model trains to the loss threshold
    DataSplit data = make_blobs(30, 2, 4, 0.3, 25);
    TrainConfig cfg;
    cfg.strategy = Strategy::aar;
    cfg.swap_target = Activation::softplus;
    cfg.swap_beta = 3.0;
    cfg.base_lr = 0.3;
    cfg.stop_loss_threshold = 0.05;
    cfg.max_epochs = 300;
    TrainResult res = sgd_train(small_mlp(26), data, cfg);
    CHECK(res.model.spec.activation == Activation::softplus);
    CHECK(res.trace.stop == StopReason::loss_threshold);
}

void test_divergence_and_checkpoint() {
    // overlapping classes keep the loss away from zero, so an unusable lr
    // produces confident-wrong explosions instead of benign interpolation
    DataSplit data = make_blobs(30, 3, 8, 3.0, 41);
    ModelSpec ds_spec;
    ds_spec.kind = ModelKind::mlp;
    ds_spec.input_dim = 8;
    ds_spec.hidden = {16, 16};
    ds_spec.num_classes = 3;
    ds_spec.activation = Activation::softplus;
    Model m{ds_spec, init_params(ds_spec, 28)};
    TrainConfig cfg;
    cfg.base_lr = 300.0;  // hopeless
    cfg.max_epochs = 30;
    cfg.stop_loss_threshold = 0.0;
    TrainResult res = sgd_train(m, data, cfg);
    CHECK(res.trace.stop == StopReason::diverged);
    // best checkpoint preserved: parameters stay finite
    for (const auto& [n, p] : res.model.params.items) CHECK(all_finite(p.value));

    // non-finite at step 0 is an error
    Model bad = small_mlp(29);
    bad.params.at("b1").value.data[0] = std::nan("");  // reaches the logits directly
    TrainConfig c2;
    c2.max_epochs = 2;
    CHECK_THROWS(sgd_train(bad, data, c2));

    // checkpoint round-trip is bitwise
    Model ck = small_mlp(30);
    save_checkpoint("/tmp/attrlab_ck.bin", ck.params);
    ParamSet back = load_checkpoint("/tmp/attrlab_ck.bin");
    CHECK(back.items.size() == ck.params.items.size());
    for (std::size_t i = 0; i < back.items.size(); ++i) {
        CHECK(back.items[i].first == ck.params.items[i].first);
        const Tensor& ta = back.items[i].second.value;
        const Tensor& tb = ck.params.items[i].second.value;
        CHECK(ta.shape == tb.shape);
        for (std::size_t k = 0; k < ta.numel(); ++k) CHECK(ta.data[k] == tb.data[k]);
    }
}

void test_ecr_zero_equals_base() {
    DataSplit data = make_blobs(15, 2, 4, 0.4, 31);
    TrainConfig base_cfg;
    base_cfg.max_epochs = 5;
    base_cfg.stop_loss_threshold = 0.0;
    base_cfg.seed = 32;
    TrainConfig ecr_cfg = base_cfg;
    ecr_cfg.strategy = Strategy::ecr;
    ecr_cfg.lambda = 0.0;
    TrainResult a = sgd_train(small_mlp(33, Activation::softplus), data, base_cfg);
    TrainResult b = sgd_train(small_mlp(33, Activation::softplus), data, ecr_cfg);
    for (std::size_t i = 0; i < a.model.params.items.size(); ++i) {
        const Tensor& ta = a.model.params.items[i].second.value;
        const Tensor& tb = b.model.params.items[i].second.value;
        for (std::size_t k = 0; k < ta.numel(); ++k) CHECK(ta.data[k] == tb.data[k]);
    }
}

}  // namespace

int main() {
    test_convex_convergence();
    test_lr_decay_trace();
    test_icr_dagger_step_sizes();
    test_ecr_penalty();
    test_atr_perturb();
    test_sam_step();
    test_activation_swap();
    test_divergence_and_checkpoint();
    test_ecr_zero_equals_base();
    return testing::finish("training");
}
