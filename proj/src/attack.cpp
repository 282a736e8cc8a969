#include "attrlab/attack.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "attrlab/rng.hpp"

namespace attrlab {

void AttackConfig::validate() const {
    if (steps < 0) throw std::invalid_argument("AttackConfig: steps must be >= 0");
    if (step_size <= 0.0) throw std::invalid_argument("AttackConfig: step_size must be > 0");
    if (eps < 0.0) throw std::invalid_argument("AttackConfig: eps must be >= 0");
    if (gamma < 0.0) throw std::invalid_argument("AttackConfig: gamma must be >= 0");
    if (restarts < 1) throw std::invalid_argument("AttackConfig: restarts must be >= 1");
}

ForwardFn make_forward_fn(const Model& model) {
    auto shared = std::make_shared<Model>(model);
    return [shared](DiffGraph& g, Var x) {
        BoundParams bp = bind_params(g, shared->params);
        return model_forward(g, shared->spec, bp, x);
    };
}

namespace {

struct Precomputed {
    std::size_t cls = 0;
    Tensor l0;      // clean log-probs
    Tensor u0;      // clean unit attribution (gradient targets)
    Tensor a_init;  // clean head-averaged scores (attention targets)
};

struct EvalResult {
    double attribution_change = 0.0;  // exact ||u-u'|| or ||A'-A||_F
    double logit_drift = 0.0;         // exact ||l-l'||
    Tensor x_adv;                     // evaluated point (clip + fixed-norm rescale applied)
    Tensor ascent_grad;               // d objective / d delta (through clip and rescale)
    bool finite = true;

    double objective(double gamma) const { return attribution_change - gamma * logit_drift; }
};

Precomputed clean_pass(const ForwardFn& fwd, const Tensor& x, const AttackConfig& cfg,
                       const AttackTarget& target) {
    Precomputed pre;
    DiffGraph g;
    Var xv = g.input(x);
    Forward f = fwd(g, xv);
    pre.l0 = f.log_probs.val();
    pre.cls = argmax_class(pre.l0);  // class frozen at the clean argmax
    if (target.kind == AttackTarget::Kind::gradient) {
        Var e = gradient_attribution_nodes_fn(g, fwd, xv, target.method, pre.cls, cfg.ig_steps);
        const double n = norm2(e.val());
        if (n == 0.0)
            throw std::runtime_error("attack: degenerate (zero) attribution at the clean input");
        pre.u0 = scale(e.val(), 1.0 / n);
    } else {
        if (f.attn.empty())
            throw std::invalid_argument("attack: attention target on a model without attention");
        if (target.layer >= f.attn.size())
            throw std::invalid_argument("attack: attention layer out of range");
        const auto& heads = f.attn[target.layer];
        Tensor m = Tensor::zeros(heads.front().val().shape);
        for (Var h : heads) m = add(m, h.val());
        pre.a_init = scale(m, 1.0 / double(heads.size()));
    }
    return pre;
}

// Smooth norm for the ascent direction; reported values use the exact norm.
Var smooth_norm(DiffGraph& g, Var v) {
    return g.sqrt(g.affine(g.sum(g.mul(v, v)), 1.0, 1e-30));
}

// Objective at x' = rescale(x + clip(delta)), with clip and rescale built into
// the graph so the ascent direction is the exact gradient of the composed map
// w.r.t. the free delta.
EvalResult evaluate(const ForwardFn& fwd, const Tensor& x, const Tensor& delta,
                    const AttackConfig& cfg, const AttackTarget& target, const Precomputed& pre,
                    bool want_grad) {
    EvalResult r;
    DiffGraph g;
    Var dv = g.input(delta);

    Var deff = dv;
    const double dn = norm2(delta);
    if (dn > cfg.eps && dn > 0.0) {
        Var nrm = smooth_norm(g, dv);
        deff = g.affine(g.div(dv, g.broadcast_scalar(nrm, delta.shape)), cfg.eps, 0.0);
    }
    Var xp = g.add(g.constant(x), deff);
    const double x_norm = norm2(x);
    if (x_norm > 0.0 && norm2(xp.val()) > 0.0) {
        Var pn = smooth_norm(g, xp);
        xp = g.affine(g.div(xp, g.broadcast_scalar(pn, x.shape)), x_norm, 0.0);
    }
    r.x_adv = xp.val();

    Var change{nullptr, -1};
    Var drift{nullptr, -1};
    if (target.kind == AttackTarget::Kind::gradient) {
        auto [e, f] =
            gradient_attribution_with_forward(g, fwd, xp, target.method, pre.cls, cfg.ig_steps);
        Var du = g.sub(g.constant(pre.u0), g.unit(e));
        change = smooth_norm(g, du);
        r.attribution_change = norm2(du.val());
        Var dl = g.sub(g.constant(pre.l0), f.log_probs);
        drift = smooth_norm(g, dl);
        r.logit_drift = norm2(dl.val());
    } else {
        Forward f = fwd(g, xp);
        const auto& heads = f.attn.at(target.layer);
        Var acc{nullptr, -1};
        for (std::size_t h = 0; h < heads.size(); ++h)
            acc = (h == 0) ? heads[h] : g.add(acc, heads[h]);
        Var amean = g.affine(acc, 1.0 / double(heads.size()), 0.0);
        Var du = g.sub(amean, g.constant(pre.a_init));
        change = smooth_norm(g, du);
        r.attribution_change = norm2(du.val());
        Var dl = g.sub(g.constant(pre.l0), f.log_probs);
        drift = smooth_norm(g, dl);
        r.logit_drift = norm2(dl.val());
    }

    if (want_grad) {
        Var objective =
            (cfg.gamma > 0.0) ? g.sub(change, g.affine(drift, cfg.gamma, 0.0)) : change;
        r.ascent_grad = g.grad(objective, {dv})[0].val();
        r.finite = all_finite(r.ascent_grad);
    }
    r.finite = r.finite && std::isfinite(r.attribution_change) && std::isfinite(r.logit_drift);
    return r;
}

double alpha_from_change(double change) {
    const double s = std::min(1.0, std::max(0.0, change / 2.0));
    return 2.0 * std::asin(s);
}

SensitivityRecord ascend_once(const ForwardFn& fwd, const Tensor& x, const AttackConfig& cfg,
                              const AttackTarget& target, const Precomputed& pre,
                              std::uint64_t init_seed) {
    SensitivityRecord rec;
    rec.seed = cfg.seed;
    rec.x_adv = x;
    const double x_norm = norm2(x);

    Rng rng(Rng::derive(init_seed, 0x5eed));
    Tensor delta = rng.normal_tensor(x.shape);
    const double dn = norm2(delta);
    if (dn > 0.0) delta = scale(delta, 0.01 * cfg.eps / dn);

    double best = -1e300;
    for (int step = 0; step <= cfg.steps; ++step) {
        EvalResult ev = evaluate(fwd, x, delta, cfg, target, pre, step < cfg.steps);
        if (!ev.finite) {
            rec.converged = false;
            break;
        }
        if (target.kind == AttackTarget::Kind::gradient && ev.attribution_change > 2.0 + 1e-9)
            throw std::logic_error("attack: unit-attribution change exceeded 2");
        if (x_norm > 0.0)
            rec.max_norm_dev = std::max(rec.max_norm_dev, std::fabs(norm2(ev.x_adv) - x_norm));
        const double value = ev.objective(cfg.gamma);
        if (value > best) {
            best = value;
            rec.notR = value;
            rec.alpha = alpha_from_change(ev.attribution_change);
            rec.logit_drift = ev.logit_drift;
            rec.x_adv = ev.x_adv;
        }
        rec.steps_used = step;
        if (step < cfg.steps) {
            // L2-normalized ascent step; step_size is a length, not a rate
            const double gn = norm2(ev.ascent_grad);
            if (gn > 0.0) delta = add(delta, scale(ev.ascent_grad, cfg.step_size / gn));
            // beyond the ball the objective depends on the direction only
            const double cur = norm2(delta);
            if (cur > cfg.eps) delta = scale(delta, cfg.eps / cur);
        }
    }
    return rec;
}

}  // namespace

SensitivityRecord run_attack(const ForwardFn& fwd, const Tensor& x, const AttackConfig& cfg,
                             const AttackTarget& target) {
    cfg.validate();
    Precomputed pre = clean_pass(fwd, x, cfg, target);

    SensitivityRecord rec;
    rec.seed = cfg.seed;
    rec.x_adv = x;
    if (cfg.steps == 0 || cfg.eps == 0.0) return rec;

    for (int r = 0; r < cfg.restarts; ++r) {
        SensitivityRecord cand =
            ascend_once(fwd, x, cfg, target, pre, Rng::derive(cfg.seed, std::uint64_t(r)));
        if (r == 0 || cand.notR > rec.notR) {
            const double dev = std::max(rec.max_norm_dev, cand.max_norm_dev);
            rec = cand;
            rec.max_norm_dev = dev;
        }
    }
    return rec;
}

SensitivityRecord notR_gradient(const Model& model, const Tensor& x, GradientMethod method,
                                const AttackConfig& cfg) {
    return run_attack(make_forward_fn(model), x, cfg, AttackTarget::gradient(method));
}

SensitivityRecord notR_attention(const Model& model, std::size_t layer, const Tensor& x,
                                 const AttackConfig& cfg) {
    return run_attack(make_forward_fn(model), x, cfg, AttackTarget::attention(layer));
}

double average_sensitivity(const ForwardFn& fwd, const Tensor& x, const AttackConfig& cfg,
                           const AttackTarget& target, int trials) {
    cfg.validate();
    if (trials < 1) throw std::invalid_argument("average_sensitivity: trials must be >= 1");
    Precomputed pre = clean_pass(fwd, x, cfg, target);

    double acc = 0.0;
    for (int t = 0; t < trials; ++t) {
        Rng rng(Rng::derive(cfg.seed, 0xa0e + std::uint64_t(t)));
        Tensor delta = rng.normal_tensor(x.shape);
        const double dn = norm2(delta);
        delta = (dn > 0.0) ? scale(delta, cfg.eps / dn) : delta;
        EvalResult ev = evaluate(fwd, x, delta, cfg, target, pre, false);
        acc += ev.objective(cfg.gamma);
    }
    return acc / double(trials);
}

double average_sensitivity(const Model& model, const Tensor& x, GradientMethod method,
                           const AttackConfig& cfg, int trials) {
    return average_sensitivity(make_forward_fn(model), x, cfg, AttackTarget::gradient(method),
                               trials);
}

}  // namespace attrlab
