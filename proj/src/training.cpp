#include "attrlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "attrlab/curvature.hpp"
#include "attrlab/rng.hpp"

namespace attrlab {

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::base: return "base";
        case Strategy::aar: return "aar";
        case Strategy::par: return "par";
        case Strategy::ecr: return "ecr";
        case Strategy::atr: return "atr";
        case Strategy::sam: return "sam";
        case Strategy::icr: return "icr";
        case Strategy::icr_dagger: return "icr_dagger";
    }
    return "?";
}

Strategy strategy_from_name(const std::string& s) {
    if (s == "base") return Strategy::base;
    if (s == "aar") return Strategy::aar;
    if (s == "par") return Strategy::par;
    if (s == "ecr") return Strategy::ecr;
    if (s == "atr") return Strategy::atr;
    if (s == "sam") return Strategy::sam;
    if (s == "icr") return Strategy::icr;
    if (s == "icr_dagger") return Strategy::icr_dagger;
    throw std::invalid_argument("unknown strategy: " + s);
}

std::string stop_reason_name(StopReason r) {
    switch (r) {
        case StopReason::loss_threshold: return "loss_threshold";
        case StopReason::max_epochs: return "max_epochs";
        case StopReason::diverged: return "diverged";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (base_lr <= 0.0) throw std::invalid_argument("TrainConfig: base_lr must be > 0");
    if (decay_factor <= 0.0 || decay_factor > 1.0)
        throw std::invalid_argument("TrainConfig: decay_factor must be in (0, 1]");
    if (lr_ratio <= 0.0) throw std::invalid_argument("TrainConfig: lr_ratio must be > 0");
    if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be > 0");
    if (max_epochs == 0) throw std::invalid_argument("TrainConfig: max_epochs must be > 0");
    if (lambda < 0.0) throw std::invalid_argument("TrainConfig: lambda must be >= 0");
    if (eps_adv < 0.0) throw std::invalid_argument("TrainConfig: eps_adv must be >= 0");
    if (rho < 0.0) throw std::invalid_argument("TrainConfig: rho must be >= 0");
    if (atr_steps < 1) throw std::invalid_argument("TrainConfig: atr_steps must be >= 1");
}

namespace {

Var batch_nll_from_logits(DiffGraph& g, Var Z, const std::vector<int>& y) {
    const std::size_t B = Z.val().rows(), d = Z.val().cols();
    std::vector<std::size_t> idx(B);
    for (std::size_t b = 0; b < B; ++b) idx[b] = b * d + std::size_t(y[b]);
    Var zy = g.gather(Z, std::move(idx), {B});
    Var rl = g.row_lse(Z);
    return g.affine(g.sum(g.sub(rl, zy)), 1.0 / double(B), 0.0);
}

struct GradPack {
    std::vector<Tensor> grads;  // aligned with ParamSet item order
    double nll = 0.0;           // plain cross-entropy part
};

// One forward/backward over a batch with the strategy's loss terms attached.
// Xadv, when given, adds the adversarial cross-entropy term (ATR).
GradPack batch_gradients(const Model& m, const Tensor& X, const std::vector<int>& y,
                         double ecr_lambda, const Tensor* Xadv) {
    const std::size_t B = y.size();
    DiffGraph g;
    BoundParams bp = bind_params(g, m.params);
    Var loss{nullptr, -1};
    Var nll{nullptr, -1};

    if (m.spec.kind == ModelKind::mlp) {
        Var Xv = g.input(X);
        Var Z = mlp_logits_batch(g, m.spec, bp, Xv);
        nll = batch_nll_from_logits(g, Z, y);
        loss = nll;
        if (ecr_lambda > 0.0) {
            // sum_b l_{y_b} = -B * nll; its X-rows are the per-sample gradients
            Var s = g.affine(nll, -double(B), 0.0);
            Var gX = g.grad(s, {Xv})[0];
            loss = g.add(loss, g.affine(g.sum(g.mul(gX, gX)), ecr_lambda / double(B), 0.0));
        }
        if (Xadv != nullptr) {
            Var Xa = g.input(*Xadv);
            Var Za = mlp_logits_batch(g, m.spec, bp, Xa);
            loss = g.add(loss, batch_nll_from_logits(g, Za, y));
        }
    } else {
        Var acc{nullptr, -1};
        Var pen{nullptr, -1};
        Var adv{nullptr, -1};
        for (std::size_t b = 0; b < B; ++b) {
            Tensor xb = Tensor::zeros({X.cols()});
            for (std::size_t j = 0; j < X.cols(); ++j) xb.data[j] = X.at(b, j);
            Var xv = g.input(xb);
            Forward f = vit_forward(g, m.spec, bp, xv);
            Var ly = g.pick(f.log_probs, std::size_t(y[b]));
            acc = (b == 0) ? ly : g.add(acc, ly);
            if (ecr_lambda > 0.0) {
                Var gx = g.grad(ly, {xv})[0];
                Var p = g.sum(g.mul(gx, gx));
                pen = (pen.id < 0) ? p : g.add(pen, p);
            }
            if (Xadv != nullptr) {
                Tensor xa = Tensor::zeros({X.cols()});
                for (std::size_t j = 0; j < X.cols(); ++j) xa.data[j] = Xadv->at(b, j);
                Forward fa = vit_forward(g, m.spec, bp, g.input(xa));
                Var la = g.pick(fa.log_probs, std::size_t(y[b]));
                adv = (adv.id < 0) ? la : g.add(adv, la);
            }
        }
        nll = g.affine(acc, -1.0 / double(B), 0.0);
        loss = nll;
        if (pen.id >= 0) loss = g.add(loss, g.affine(pen, ecr_lambda / double(B), 0.0));
        if (adv.id >= 0) loss = g.add(loss, g.affine(adv, -1.0 / double(B), 0.0));
    }

    GradPack pack;
    pack.nll = nll.val().data[0];
    std::vector<Var> gs = g.grad(loss, bp.all());
    pack.grads.reserve(gs.size());
    for (Var v : gs) pack.grads.push_back(v.val());
    return pack;
}

// gradient of the summed training loss w.r.t. the batch inputs
Tensor batch_input_loss_grad(const Model& m, const Tensor& X, const std::vector<int>& y) {
    const std::size_t B = y.size();
    DiffGraph g;
    BoundParams bp = bind_params(g, m.params);
    if (m.spec.kind == ModelKind::mlp) {
        Var Xv = g.input(X);
        Var Z = mlp_logits_batch(g, m.spec, bp, Xv);
        Var s = g.affine(batch_nll_from_logits(g, Z, y), double(B), 0.0);  // sum of -l_y
        return g.grad(s, {Xv})[0].val();
    }
    Tensor out = Tensor::zeros(X.shape);
    for (std::size_t b = 0; b < B; ++b) {
        Tensor xb = Tensor::zeros({X.cols()});
        for (std::size_t j = 0; j < X.cols(); ++j) xb.data[j] = X.at(b, j);
        Var xv = g.input(xb);
        Forward f = vit_forward(g, m.spec, bp, xv);
        Tensor gx = g.grad(g.neg(g.pick(f.log_probs, std::size_t(y[b]))), {xv})[0].val();
        for (std::size_t j = 0; j < X.cols(); ++j) out.at(b, j) = gx.data[j];
    }
    return out;
}

Tensor atr_batch_perturb(const Model& m, const Tensor& X, const std::vector<int>& y,
                         double eps_adv, int steps) {
    if (eps_adv == 0.0) return X;
    Tensor Xp = X;
    const double step_len = eps_adv / double(steps);
    for (int s = 0; s < steps; ++s) {
        Tensor G = batch_input_loss_grad(m, Xp, y);
        for (std::size_t b = 0; b < X.rows(); ++b) {
            double gn = 0;
            for (std::size_t j = 0; j < X.cols(); ++j) gn += G.at(b, j) * G.at(b, j);
            gn = std::sqrt(gn);
            if (gn == 0) continue;
            for (std::size_t j = 0; j < X.cols(); ++j)
                Xp.at(b, j) += step_len * G.at(b, j) / gn;
            // project back into the per-sample L2 ball
            double dn = 0;
            for (std::size_t j = 0; j < X.cols(); ++j) {
                const double d = Xp.at(b, j) - X.at(b, j);
                dn += d * d;
            }
            dn = std::sqrt(dn);
            if (dn > eps_adv)
                for (std::size_t j = 0; j < X.cols(); ++j)
                    Xp.at(b, j) = X.at(b, j) + (Xp.at(b, j) - X.at(b, j)) * eps_adv / dn;
        }
    }
    return Xp;
}

double global_grad_norm(const std::vector<Tensor>& grads) {
    double acc = 0;
    for (const Tensor& g : grads) acc += dot(g, g);
    return std::sqrt(acc);
}

void apply_update(ParamSet& params, const std::vector<Tensor>& grads, double lr) {
    for (std::size_t i = 0; i < params.items.size(); ++i) {
        Param& p = params.items[i].second;
        const double step = lr * p.lr_multiplier;
        for (std::size_t k = 0; k < p.value.numel(); ++k)
            p.value.data[k] -= step * grads[i].data[k];
    }
}

bool grads_finite(const std::vector<Tensor>& grads) {
    for (const Tensor& g : grads)
        if (!all_finite(g)) return false;
    return true;
}

Tensor gather_rows(const Dataset& ds, const std::vector<std::size_t>& rows) {
    Tensor out = Tensor::zeros({rows.size(), ds.inputs.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < ds.inputs.cols(); ++j)
            out.at(i, j) = ds.inputs.at(rows[i], j);
    return out;
}

// Exact cross-entropy over a whole dataset, forward only.
double full_train_loss(const Model& m, const Dataset& ds) {
    DiffGraph g;
    BoundParams bp = bind_params(g, m.params);
    if (m.spec.kind == ModelKind::mlp) {
        Var Z = mlp_logits_batch(g, m.spec, bp, g.input(ds.inputs));
        return batch_nll_from_logits(g, Z, ds.labels).val().data[0];
    }
    double acc = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        Forward f = vit_forward(g, m.spec, bp, g.input(ds.row(i)));
        acc -= f.log_probs.val().data[std::size_t(ds.labels[i])];
    }
    return acc / double(ds.size());
}

}  // namespace

double accuracy(const Model& model, const Dataset& ds) {
    if (ds.size() == 0) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        LogitBundle lb = eval_logits(model, ds.row(i));
        if (argmax_class(lb.l) == std::size_t(ds.labels[i])) ++hits;
    }
    return double(hits) / double(ds.size());
}

double ecr_penalty(const Model& model, const Tensor& x, std::size_t label, double lambda) {
    if (lambda == 0.0) return 0.0;
    DiffGraph g;
    BoundParams bp = bind_params(g, model.params);
    Var xv = g.input(x);
    Forward f = model_forward(g, model.spec, bp, xv);
    Tensor gx = g.grad(g.pick(f.log_probs, label), {xv})[0].val();
    return lambda * dot(gx, gx);
}

Tensor atr_perturb(const Model& model, const Tensor& x, std::size_t label, double eps_adv,
                   int steps) {
    if (eps_adv < 0.0) throw std::invalid_argument("atr_perturb: eps_adv must be >= 0");
    Tensor X = Tensor::zeros({1, x.numel()});
    for (std::size_t j = 0; j < x.numel(); ++j) X.at(0, j) = x.data[j];
    Tensor Xp = atr_batch_perturb(model, X, {int(label)}, eps_adv, steps);
    Tensor out = Tensor::zeros(x.shape);
    for (std::size_t j = 0; j < x.numel(); ++j) out.data[j] = Xp.at(0, j);
    return out;
}

void sgd_step(Model& model, const Dataset& batch, double lr) {
    GradPack pack = batch_gradients(model, batch.inputs, batch.labels, 0.0, nullptr);
    apply_update(model.params, pack.grads, lr);
}

void sam_step(Model& model, const Dataset& batch, double rho, double lr) {
    if (rho < 0.0) throw std::invalid_argument("sam_step: rho must be >= 0");
    GradPack first = batch_gradients(model, batch.inputs, batch.labels, 0.0, nullptr);
    const double gn = global_grad_norm(first.grads);
    if (rho == 0.0 || gn == 0.0) {
        apply_update(model.params, first.grads, lr);  // plain step
        return;
    }
    ParamSet saved = model.params;
    for (std::size_t i = 0; i < model.params.items.size(); ++i) {
        Param& p = model.params.items[i].second;
        for (std::size_t k = 0; k < p.value.numel(); ++k)
            p.value.data[k] += rho * first.grads[i].data[k] / gn;
    }
    GradPack second = batch_gradients(model, batch.inputs, batch.labels, 0.0, nullptr);
    model.params = std::move(saved);
    apply_update(model.params, second.grads, lr);
}

SwapResult activation_swap(const Model& model, Activation target, double beta, SwapMode mode) {
    if (target != Activation::softplus && target != Activation::gelu)
        throw std::invalid_argument("activation_swap: target must be softplus or gelu");
    SwapResult res;
    res.model = model;
    if (model.spec.activation != Activation::relu) return res;  // no ReLU sites: no-op
    res.model.spec.activation = target;
    res.model.spec.softplus_beta = beta;
    res.swapped = true;
    (void)mode;  // ante vs post differ only in when the caller applies it
    return res;
}

TrainResult sgd_train(Model model, const DataSplit& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.train.size() == 0) throw std::invalid_argument("sgd_train: empty training set");

    if (cfg.strategy == Strategy::aar) {
        SwapResult sw = activation_swap(model, cfg.swap_target, cfg.swap_beta, SwapMode::ante);
        model = sw.model;
    }
    set_group_multipliers(model.params,
                          cfg.strategy == Strategy::icr_dagger ? cfg.lr_ratio : 1.0);

    TrainResult out;
    out.trace.stop = StopReason::max_epochs;
    const std::size_t N = data.train.size();
    const std::size_t warmup = cfg.effective_warmup();

    double initial_loss = -1.0;
    double best_loss = 1e300;
    ParamSet best_params = model.params;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = cfg.base_lr * std::pow(cfg.decay_factor, double(epoch));
        Rng shuffle_rng(Rng::derive(cfg.seed, 0xe0c + epoch));
        std::vector<std::size_t> perm(N);
        for (std::size_t i = 0; i < N; ++i) perm[i] = i;
        for (std::size_t i = N; i > 1; --i) std::swap(perm[i - 1], perm[shuffle_rng.index(i)]);

        double epoch_loss = 0;
        std::size_t batches = 0;
        bool diverged = false;
        bool hit_threshold = false;
        for (std::size_t start = 0; start < N; start += cfg.batch_size) {
            const std::size_t stop = std::min(N, start + cfg.batch_size);
            std::vector<std::size_t> rows(perm.begin() + long(start), perm.begin() + long(stop));
            Tensor X = gather_rows(data.train, rows);
            std::vector<int> y;
            y.reserve(rows.size());
            for (std::size_t r : rows) y.push_back(data.train.labels[r]);

            GradPack pack;
            if (cfg.strategy == Strategy::ecr) {
                pack = batch_gradients(model, X, y, cfg.lambda, nullptr);
            } else if (cfg.strategy == Strategy::atr) {
                Tensor Xa = atr_batch_perturb(model, X, y, cfg.eps_adv, cfg.atr_steps);
                pack = batch_gradients(model, X, y, 0.0, &Xa);
            } else if (cfg.strategy == Strategy::sam) {
                pack = batch_gradients(model, X, y, 0.0, nullptr);
                const double gn = global_grad_norm(pack.grads);
                if (cfg.rho > 0.0 && gn > 0.0) {
                    ParamSet saved = model.params;
                    for (std::size_t i = 0; i < model.params.items.size(); ++i) {
                        Param& p = model.params.items[i].second;
                        for (std::size_t k = 0; k < p.value.numel(); ++k)
                            p.value.data[k] += cfg.rho * pack.grads[i].data[k] / gn;
                    }
                    GradPack second = batch_gradients(model, X, y, 0.0, nullptr);
                    model.params = std::move(saved);
                    pack.grads = std::move(second.grads);
                }
            } else {
                pack = batch_gradients(model, X, y, 0.0, nullptr);
            }

            if (initial_loss < 0.0) {
                if (!std::isfinite(pack.nll))
                    throw std::runtime_error("sgd_train: loss not finite at step 0");
                initial_loss = pack.nll;
            }
            if (!std::isfinite(pack.nll) || pack.nll > 1e3 * std::max(initial_loss, 1e-12) ||
                !grads_finite(pack.grads)) {
                diverged = true;
                break;
            }

            if (out.trace.step_log.size() < 8) {
                double bb = 0, cl = 0;
                for (const auto& [name, p] : model.params.items) {
                    const double eff = lr * p.lr_multiplier;
                    if (p.group == ParamGroup::classifier)
                        cl = eff;
                    else
                        bb = eff;
                }
                out.trace.step_log.push_back({bb, cl});
            }

            apply_update(model.params, pack.grads, lr);
            epoch_loss += pack.nll;
            ++batches;

            // exact stop check a few times per epoch keeps runs with very
            // different learning rates at approximately equal training loss
            if (epoch >= warmup && cfg.stop_check_batches > 0 &&
                (batches % cfg.stop_check_batches == 0) &&
                full_train_loss(model, data.train) < cfg.stop_loss_threshold) {
                hit_threshold = true;
                break;
            }
        }

        if (diverged) {
            out.trace.stop = StopReason::diverged;
            model.params = best_params;  // keep the best checkpoint
            break;
        }

        TrainTrace::EpochRow row;
        row.epoch = epoch;
        row.train_loss = hit_threshold
                             ? full_train_loss(model, data.train)
                             : epoch_loss / double(std::max<std::size_t>(1, batches));
        row.val_accuracy = accuracy(model, data.val);
        row.lr = lr;
        out.trace.epochs.push_back(row);
        epoch_loss = row.train_loss;

        if (epoch_loss < best_loss) {
            best_loss = epoch_loss;
            best_params = model.params;
        }

        if (cfg.probe_samples > 0 && (epoch % cfg.probe_every == 0)) {
            TrainTrace::ProbeRow pr;
            pr.epoch = epoch;
            const std::size_t K = std::min(cfg.probe_samples, N);
            std::vector<Tensor> probe_batch;
            double lam = 0;
            for (std::size_t i = 0; i < K; ++i) {
                Tensor x = data.train.row(i);
                probe_batch.push_back(x);
                lam += input_hessian_lambda_max(model, x).value;
            }
            pr.mean_lambda_max = lam / double(K);
            pr.gn_trace = param_gn_trace(model, probe_batch);
            if (model.spec.kind == ModelKind::vit) {
                EntropyStats es = attention_entropy(eval_stack(model, probe_batch[0]), &model);
                double e = 0;
                for (double v : es.mean_entropy) e += v;
                pr.mean_entropy = e / double(es.mean_entropy.size());
            }
            out.trace.probes.push_back(pr);
        }

        if (hit_threshold || (epoch >= warmup && epoch_loss < cfg.stop_loss_threshold)) {
            out.trace.stop = StopReason::loss_threshold;
            break;
        }
    }

    out.model = std::move(model);
    return out;
}

void save_checkpoint(const std::string& path, const ParamSet& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
    const char magic[4] = {'A', 'T', 'R', 'L'};
    os.write(magic, 4);
    const std::uint32_t version = 1;
    os.write(reinterpret_cast<const char*>(&version), 4);
    const std::uint64_t count = params.items.size();
    os.write(reinterpret_cast<const char*>(&count), 8);
    for (const auto& [name, p] : params.items) {
        const std::uint64_t len = name.size();
        os.write(reinterpret_cast<const char*>(&len), 8);
        os.write(name.data(), std::streamsize(len));
        const std::uint64_t rank = p.value.shape.size();
        os.write(reinterpret_cast<const char*>(&rank), 8);
        for (std::size_t d : p.value.shape) {
            const std::uint64_t dd = d;
            os.write(reinterpret_cast<const char*>(&dd), 8);
        }
        os.write(reinterpret_cast<const char*>(p.value.data.data()),
                 std::streamsize(p.value.numel() * sizeof(double)));
    }
}

ParamSet load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "ATRL", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    std::uint32_t version = 0;
    is.read(reinterpret_cast<char*>(&version), 4);
    if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
    std::uint64_t count = 0;
    is.read(reinterpret_cast<char*>(&count), 8);
    ParamSet ps;
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint64_t len = 0;
        is.read(reinterpret_cast<char*>(&len), 8);
        std::string name(len, '\0');
        is.read(name.data(), std::streamsize(len));
        std::uint64_t rank = 0;
        is.read(reinterpret_cast<char*>(&rank), 8);
        std::vector<std::size_t> shape(rank);
        for (std::uint64_t r = 0; r < rank; ++r) {
            std::uint64_t d = 0;
            is.read(reinterpret_cast<char*>(&d), 8);
            shape[r] = d;
        }
        Tensor t = Tensor::zeros(shape);
        is.read(reinterpret_cast<char*>(t.data.data()),
                std::streamsize(t.numel() * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint: truncated payload in " + path);
        ps.items.push_back({std::move(name), Param{std::move(t), ParamGroup::backbone, 1.0}});
    }
    return ps;
}

}  // namespace attrlab
