#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "attrlab/attack.hpp"
#include "attrlab/attribution.hpp"
#include "attrlab/curvature.hpp"
#include "attrlab/data.hpp"
#include "attrlab/stats.hpp"
#include "attrlab/training.hpp"

namespace py = pybind11;
using namespace attrlab;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<std::size_t> shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[std::size_t(i)] = std::size_t(a.shape(i));
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<double> out(shape);
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
}

GradientMethod method_arg(const std::string& name) { return gradient_method_from_name(name); }

AttackConfig attack_args(int steps, double step_size, double eps, double gamma, int restarts,
                         int ig_steps, std::uint64_t seed) {
    AttackConfig cfg;
    cfg.steps = steps;
    cfg.step_size = step_size;
    cfg.eps = eps;
    cfg.gamma = gamma;
    cfg.restarts = restarts;
    cfg.ig_steps = ig_steps;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_attrlab, m) {
    m.doc() = "attribution-robustness laboratory core";

    py::class_<ModelSpec>(m, "ModelSpec");

    py::class_<Model>(m, "Model")
        .def("logits",
             [](const Model& self, const py::array_t<double>& x) {
                 return array_from_tensor(eval_logits(self, tensor_from_array(x)).z);
             })
        .def("log_probs",
             [](const Model& self, const py::array_t<double>& x) {
                 return array_from_tensor(eval_logits(self, tensor_from_array(x)).l);
             })
        .def("probabilities",
             [](const Model& self, const py::array_t<double>& x) {
                 return array_from_tensor(eval_logits(self, tensor_from_array(x)).p);
             })
        .def("attribution",
             [](const Model& self, const py::array_t<double>& x, const std::string& method) {
                 AttributionMap map =
                     attribute_gradient(self, tensor_from_array(x), method_arg(method));
                 py::dict out;
                 out["raw"] = array_from_tensor(map.raw);
                 out["degenerate"] = map.degenerate;
                 if (!map.degenerate) out["unit"] = array_from_tensor(map.unit);
                 return out;
             },
             py::arg("x"), py::arg("method") = "vanilla")
        .def("attention_stack", [](const Model& self, const py::array_t<double>& x) {
            AttentionStack st = eval_stack(self, tensor_from_array(x));
            py::list layers;
            for (const auto& heads : st.layers) {
                py::list hl;
                for (const Tensor& h : heads) hl.append(array_from_tensor(h));
                layers.append(hl);
            }
            return layers;
        });

    m.def(
        "mlp",
        [](std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t classes,
           const std::string& activation, double beta, std::uint64_t seed) {
            ModelSpec spec;
            spec.kind = ModelKind::mlp;
            spec.input_dim = input_dim;
            spec.hidden = hidden;
            spec.num_classes = classes;
            spec.activation = activation_from_name(activation);
            spec.softplus_beta = beta;
            return Model{spec, init_params(spec, seed)};
        },
        py::arg("input_dim"), py::arg("hidden"), py::arg("classes"),
        py::arg("activation") = "relu", py::arg("beta") = 1.0, py::arg("seed") = 1);

    m.def(
        "vit",
        [](std::size_t image_side, std::size_t patch, std::size_t embed_dim, std::size_t depth,
           std::size_t heads, std::size_t classes, const std::string& attention,
           const std::string& phi, const std::string& activation, std::uint64_t seed) {
            ModelSpec spec;
            spec.kind = ModelKind::vit;
            spec.image_side = image_side;
            spec.input_dim = image_side * image_side;
            spec.patch = patch;
            spec.embed_dim = embed_dim;
            spec.depth = depth;
            spec.heads = heads;
            spec.num_classes = classes;
            spec.attention =
                attention == "kernelized" ? AttentionKind::kernelized : AttentionKind::softmax;
            spec.attn_phi = activation_from_name(phi);
            spec.activation = activation_from_name(activation);
            return Model{spec, init_params(spec, seed)};
        },
        py::arg("image_side"), py::arg("patch"), py::arg("embed_dim"), py::arg("depth"),
        py::arg("heads"), py::arg("classes"), py::arg("attention") = "softmax",
        py::arg("phi") = "gelu", py::arg("activation") = "gelu", py::arg("seed") = 1);

    m.def("lse", [](const py::array_t<double>& z) { return lse_value(tensor_from_array(z)); });
    m.def("class_log_prob", [](const py::array_t<double>& z, std::size_t cls) {
        return neg_log_prob_value(tensor_from_array(z), cls);
    });

    m.def(
        "attack_gradient",
        [](const Model& model, const py::array_t<double>& x, const std::string& method, int steps,
           double step_size, double eps, double gamma, int restarts, int ig_steps,
           std::uint64_t seed) {
            SensitivityRecord rec =
                notR_gradient(model, tensor_from_array(x), method_arg(method),
                              attack_args(steps, step_size, eps, gamma, restarts, ig_steps, seed));
            py::dict out;
            out["notR"] = rec.notR;
            out["alpha"] = rec.alpha;
            out["logit_drift"] = rec.logit_drift;
            out["converged"] = rec.converged;
            out["steps_used"] = rec.steps_used;
            out["x_adv"] = array_from_tensor(rec.x_adv);
            return out;
        },
        py::arg("model"), py::arg("x"), py::arg("method") = "vanilla", py::arg("steps") = 10,
        py::arg("step_size") = 0.01, py::arg("eps") = 1.0, py::arg("gamma") = 1e-4,
        py::arg("restarts") = 1, py::arg("ig_steps") = 32, py::arg("seed") = 0);

    m.def(
        "attack_attention",
        [](const Model& model, std::size_t layer, const py::array_t<double>& x, int steps,
           double step_size, double eps, double gamma, int restarts, std::uint64_t seed) {
            SensitivityRecord rec =
                notR_attention(model, layer, tensor_from_array(x),
                               attack_args(steps, step_size, eps, gamma, restarts, 32, seed));
            py::dict out;
            out["notR"] = rec.notR;
            out["alpha"] = rec.alpha;
            out["logit_drift"] = rec.logit_drift;
            out["converged"] = rec.converged;
            return out;
        },
        py::arg("model"), py::arg("layer"), py::arg("x"), py::arg("steps") = 50,
        py::arg("step_size") = 0.05, py::arg("eps") = 1.0, py::arg("gamma") = 1e-4,
        py::arg("restarts") = 1, py::arg("seed") = 0);

    m.def(
        "average_sensitivity",
        [](const Model& model, const py::array_t<double>& x, const std::string& method, int trials,
           double eps, double gamma, std::uint64_t seed) {
            AttackConfig cfg;
            cfg.eps = eps;
            cfg.gamma = gamma;
            cfg.seed = seed;
            return average_sensitivity(model, tensor_from_array(x), method_arg(method), cfg,
                                       trials);
        },
        py::arg("model"), py::arg("x"), py::arg("method") = "vanilla", py::arg("trials") = 16,
        py::arg("eps") = 1.0, py::arg("gamma") = 1e-4, py::arg("seed") = 0);

    m.def("lambda_max", [](const Model& model, const py::array_t<double>& x) {
        PowerResult r = input_hessian_lambda_max(model, tensor_from_array(x));
        return py::make_tuple(r.value, r.converged);
    });
    m.def("gn_trace", [](const Model& model, const std::vector<py::array_t<double>>& xs) {
        std::vector<Tensor> batch;
        batch.reserve(xs.size());
        for (const auto& x : xs) batch.push_back(tensor_from_array(x));
        return param_gn_trace(model, batch);
    });
    m.def("snr", [](const Model& model, const py::array_t<double>& x) {
        return snr_c(model, tensor_from_array(x)).value;
    });
    m.def("attention_entropy", [](const Model& model, const py::array_t<double>& x) {
        EntropyStats es = attention_entropy(eval_stack(model, tensor_from_array(x)), &model);
        py::dict out;
        out["mean_entropy"] = es.mean_entropy;
        out["distance_to_uniform"] = es.distance_to_uniform;
        out["sigma"] = es.sigma;
        return out;
    });
    m.def(
        "entropy_bound",
        [](std::size_t tokens, const std::vector<double>& ent_min_grid, double grid_step) {
            EntropyBoundResult r = entropy_bound_oracle(tokens, ent_min_grid, grid_step);
            return py::make_tuple(r.ent_min, r.max_deviation);
        },
        py::arg("tokens"), py::arg("ent_min_grid"), py::arg("grid_step") = 0.02);
    m.def("principal_curvatures", [](const std::vector<double>& eigs, double grad_norm) {
        return principal_curvatures(eigs, grad_norm);
    });

    m.def("welch_ttest", [](const std::vector<double>& a, const std::vector<double>& b) {
        WelchResult r = welch_ttest(a, b);
        py::dict out;
        out["t"] = r.t;
        out["dof"] = r.dof;
        out["p_two_sided"] = r.p_two_sided;
        out["significant"] = r.significant;
        return out;
    });
    m.def("spearman",
          [](const std::vector<double>& a, const std::vector<double>& b) { return spearman(a, b); });

    m.def(
        "make_blobs",
        [](std::size_t n_per_class, std::size_t classes, std::size_t dim, double spread,
           std::uint64_t seed) {
            DataSplit ds = make_blobs(n_per_class, classes, dim, spread, seed);
            py::dict out;
            out["train_x"] = array_from_tensor(ds.train.inputs);
            out["train_y"] = ds.train.labels;
            out["val_x"] = array_from_tensor(ds.val.inputs);
            out["val_y"] = ds.val.labels;
            return out;
        },
        py::arg("n_per_class"), py::arg("classes"), py::arg("dim"), py::arg("spread") = 1.0,
        py::arg("seed") = 1);

    m.def(
        "train",
        [](Model model, const py::array_t<double>& train_x, const std::vector<int>& train_y,
           const py::array_t<double>& val_x, const std::vector<int>& val_y,
           const std::string& strategy, double lr, double loss_threshold, std::size_t max_epochs,
           std::size_t batch_size, std::uint64_t seed) {
            DataSplit data;
            data.train.inputs = tensor_from_array(train_x);
            data.train.labels = train_y;
            data.val.inputs = tensor_from_array(val_x);
            data.val.labels = val_y;
            data.num_classes = model.spec.num_classes;
            TrainConfig cfg;
            cfg.strategy = strategy_from_name(strategy);
            cfg.base_lr = lr;
            cfg.stop_loss_threshold = loss_threshold;
            cfg.max_epochs = max_epochs;
            cfg.batch_size = batch_size;
            cfg.warmup_epochs = 2;
            cfg.seed = seed;
            TrainResult res = sgd_train(model, data, cfg);
            py::dict trace;
            trace["stop"] = stop_reason_name(res.trace.stop);
            trace["epochs"] = res.trace.epochs.size();
            trace["final_loss"] =
                res.trace.epochs.empty() ? 0.0 : res.trace.epochs.back().train_loss;
            trace["val_accuracy"] =
                res.trace.epochs.empty() ? 0.0 : res.trace.epochs.back().val_accuracy;
            return py::make_tuple(res.model, trace);
        },
        py::arg("model"), py::arg("train_x"), py::arg("train_y"), py::arg("val_x"),
        py::arg("val_y"), py::arg("strategy") = "base", py::arg("lr") = 0.1,
        py::arg("loss_threshold") = 0.05, py::arg("max_epochs") = 100, py::arg("batch_size") = 16,
        py::arg("seed") = 1);

    m.def("accuracy", [](const Model& model, const py::array_t<double>& x,
                         const std::vector<int>& y) {
        Dataset ds;
        ds.inputs = tensor_from_array(x);
        ds.labels = y;
        return accuracy(model, ds);
    });
}
