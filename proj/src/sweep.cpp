#include "attrlab/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "attrlab/attribution.hpp"
#include "attrlab/curvature.hpp"
#include "attrlab/rng.hpp"
#include "attrlab/stats.hpp"

namespace attrlab {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig RunConfig::parse_string(const std::string& text) {
    RunConfig cfg;
    cfg.content = text;
    std::istringstream is(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::invalid_argument("config line " + std::to_string(lineno) +
                                            ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            cfg.sections[section];
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        cfg.sections[section][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream os;
    os << is.rdbuf();
    return parse_string(os.str());
}

bool RunConfig::has(const std::string& section, const std::string& key) const {
    auto s = sections.find(section);
    return s != sections.end() && s->second.count(key) > 0;
}

std::string RunConfig::get(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
    auto s = sections.find(section);
    if (s == sections.end()) return fallback;
    auto k = s->second.find(key);
    return k == s->second.end() ? fallback : k->second;
}

double RunConfig::get_num(const std::string& section, const std::string& key,
                          double fallback) const {
    const std::string v = get(section, key, "");
    if (v.empty()) return fallback;
    try {
        return std::stod(v);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: " + section + "." + key + " is not numeric: " + v);
    }
}

std::vector<std::string> RunConfig::get_list(const std::string& section,
                                             const std::string& key) const {
    std::vector<std::string> out;
    std::string v = get(section, key, "");
    std::size_t pos = 0;
    while (pos < v.size()) {
        std::size_t comma = v.find(',', pos);
        if (comma == std::string::npos) comma = v.size();
        const std::string item = trim(v.substr(pos, comma - pos));
        if (!item.empty()) out.push_back(item);
        pos = comma + 1;
    }
    return out;
}

std::string RunConfig::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : content) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string format_f64(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_records_csv(const std::string& path, const std::vector<RunRecord>& records) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "config_hash,seed,strategy,lr,method,metric,sample,value\n";
    for (const RunRecord& r : records)
        os << r.config_hash << ',' << r.seed << ',' << r.strategy << ',' << format_f64(r.lr)
           << ',' << r.method << ',' << r.metric << ',' << r.sample << ','
           << format_f64(r.value) << '\n';
}

std::vector<RunRecord> read_records_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("empty records file " + path);
    std::vector<RunRecord> out;
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        std::vector<std::string> cells;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            std::size_t comma = line.find(',', pos);
            if (comma == std::string::npos) comma = line.size();
            cells.push_back(line.substr(pos, comma - pos));
            pos = comma + 1;
        }
        if (cells.size() != 8) throw std::runtime_error("bad records row: " + line);
        RunRecord r;
        r.config_hash = cells[0];
        r.seed = std::stoull(cells[1]);
        r.strategy = cells[2];
        r.lr = std::stod(cells[3]);
        r.method = cells[4];
        r.metric = cells[5];
        r.sample = std::stol(cells[6]);
        r.value = std::stod(cells[7]);
        out.push_back(std::move(r));
    }
    return out;
}

DataSplit dataset_from_config(const RunConfig& cfg, std::size_t limit_override) {
    const std::string kind = cfg.get("dataset", "kind", "blobs");
    if (kind == "blobs") {
        DataSplit ds = make_blobs(
            std::size_t(cfg.get_num("dataset", "n_per_class", 100)),
            std::size_t(cfg.get_num("dataset", "classes", 3)),
            std::size_t(cfg.get_num("dataset", "dim", 16)),
            cfg.get_num("dataset", "spread", 1.0),
            std::uint64_t(cfg.get_num("dataset", "seed", 1)));
        return ds;
    }
    if (kind == "idx") {
        const std::size_t limit =
            limit_override ? limit_override : std::size_t(cfg.get_num("dataset", "limit", 1000));
        Dataset all = load_idx(cfg.get("dataset", "images", ""), cfg.get("dataset", "labels", ""),
                               limit);
        int maxl = 0;
        for (int l : all.labels) maxl = std::max(maxl, l);
        // 80/20 contiguous split on the deterministic load order
        const std::size_t n_train = all.size() * 8 / 10;
        DataSplit ds;
        ds.num_classes = std::size_t(maxl) + 1;
        ds.train.split = "train";
        ds.val.split = "val";
        const std::size_t dim = all.dim();
        ds.train.inputs = Tensor::zeros({n_train, dim});
        ds.val.inputs = Tensor::zeros({all.size() - n_train, dim});
        for (std::size_t i = 0; i < all.size(); ++i) {
            if (i < n_train) {
                for (std::size_t j = 0; j < dim; ++j) ds.train.inputs.at(i, j) = all.inputs.at(i, j);
                ds.train.labels.push_back(all.labels[i]);
            } else {
                for (std::size_t j = 0; j < dim; ++j)
                    ds.val.inputs.at(i - n_train, j) = all.inputs.at(i, j);
                ds.val.labels.push_back(all.labels[i]);
            }
        }
        return ds;
    }
    throw std::invalid_argument("dataset.kind must be blobs or idx");
}

ModelSpec model_spec_from_config(const RunConfig& cfg, std::size_t input_dim,
                                 std::size_t num_classes) {
    ModelSpec spec;
    spec.input_dim = input_dim;
    spec.num_classes = num_classes;
    const std::string kind = cfg.get("model", "kind", "mlp");
    spec.activation = activation_from_name(cfg.get("model", "activation", "relu"));
    spec.softplus_beta = cfg.get_num("model", "softplus_beta", 1.0);
    if (kind == "mlp") {
        spec.kind = ModelKind::mlp;
        for (const std::string& w : cfg.get_list("model", "hidden"))
            spec.hidden.push_back(std::size_t(std::stoul(w)));
        return spec;
    }
    if (kind == "vit") {
        spec.kind = ModelKind::vit;
        spec.image_side = std::size_t(cfg.get_num("model", "image_side", 8));
        spec.patch = std::size_t(cfg.get_num("model", "patch", 4));
        spec.embed_dim = std::size_t(cfg.get_num("model", "embed_dim", 12));
        spec.depth = std::size_t(cfg.get_num("model", "depth", 2));
        spec.heads = std::size_t(cfg.get_num("model", "heads", 3));
        spec.mlp_ratio = std::size_t(cfg.get_num("model", "mlp_ratio", 2));
        spec.attention = cfg.get("model", "attention", "softmax") == "kernelized"
                             ? AttentionKind::kernelized
                             : AttentionKind::softmax;
        spec.attn_phi = activation_from_name(cfg.get("model", "attn_phi", "gelu"));
        spec.attn_phi_beta = cfg.get_num("model", "attn_phi_beta", 3.0);
        if (input_dim != spec.image_side * spec.image_side)
            throw std::invalid_argument("model: image_side^2 must match the dataset dim");
        spec.validate();
        return spec;
    }
    throw std::invalid_argument("model.kind must be mlp or vit");
}

std::string model_spec_to_config(const ModelSpec& spec) {
    std::ostringstream os;
    os << "[model]\n";
    os << "kind = " << (spec.kind == ModelKind::mlp ? "mlp" : "vit") << "\n";
    os << "input_dim = " << spec.input_dim << "\n";
    os << "num_classes = " << spec.num_classes << "\n";
    os << "activation = " << activation_name(spec.activation) << "\n";
    os << "softplus_beta = " << format_f64(spec.softplus_beta) << "\n";
    if (spec.kind == ModelKind::mlp) {
        os << "hidden = ";
        for (std::size_t i = 0; i < spec.hidden.size(); ++i)
            os << (i ? "," : "") << spec.hidden[i];
        os << "\n";
    } else {
        os << "image_side = " << spec.image_side << "\n";
        os << "patch = " << spec.patch << "\n";
        os << "embed_dim = " << spec.embed_dim << "\n";
        os << "depth = " << spec.depth << "\n";
        os << "heads = " << spec.heads << "\n";
        os << "mlp_ratio = " << spec.mlp_ratio << "\n";
        os << "attention = "
           << (spec.attention == AttentionKind::softmax ? "softmax" : "kernelized") << "\n";
        os << "attn_phi = " << activation_name(spec.attn_phi) << "\n";
        os << "attn_phi_beta = " << format_f64(spec.attn_phi_beta) << "\n";
    }
    return os.str();
}

ModelSpec model_spec_from_string(const std::string& text) {
    RunConfig cfg = RunConfig::parse_string(text);
    const std::size_t input_dim = std::size_t(cfg.get_num("model", "input_dim", 0));
    const std::size_t classes = std::size_t(cfg.get_num("model", "num_classes", 0));
    if (input_dim == 0 || classes == 0)
        throw std::invalid_argument("model config: input_dim and num_classes required");
    return model_spec_from_config(cfg, input_dim, classes);
}

TrainConfig train_config_from(const RunConfig& cfg, Strategy strategy, double lr,
                              std::uint64_t seed) {
    TrainConfig tc;
    tc.strategy = strategy;
    tc.base_lr = lr;
    tc.seed = seed;
    tc.decay_factor = cfg.get_num("train", "decay_factor", 1.0 - 1e-3);
    tc.lr_ratio = cfg.get_num("train", "lr_ratio", 10.0);
    tc.stop_loss_threshold = cfg.get_num("train", "loss_threshold", 0.05);
    tc.max_epochs = std::size_t(cfg.get_num("train", "max_epochs", 100));
    tc.batch_size = std::size_t(cfg.get_num("train", "batch_size", 16));
    if (cfg.has("train", "warmup_epochs"))
        tc.warmup_epochs = std::size_t(cfg.get_num("train", "warmup_epochs", 0));
    const std::string name = strategy_name(strategy);
    tc.lambda = cfg.get_num("strategy." + name, "lambda", 0.1);
    tc.eps_adv = cfg.get_num("strategy." + name, "eps_adv", 0.01);
    tc.atr_steps = int(cfg.get_num("strategy." + name, "steps", 1));
    tc.rho = cfg.get_num("strategy." + name, "rho", 0.05);
    tc.swap_beta = cfg.get_num("strategy." + name, "beta", 1.0);
    tc.swap_target =
        activation_from_name(cfg.get("strategy." + name, "target", "softplus"));
    return tc;
}

AttackConfig attack_config_from(const RunConfig& cfg, bool attention) {
    AttackConfig ac = attention ? AttackConfig::attention_defaults()
                                : AttackConfig::gradient_defaults();
    const std::string sec = "attack";
    ac.steps = int(cfg.get_num(sec, attention ? "attention_steps" : "steps", ac.steps));
    ac.step_size =
        cfg.get_num(sec, attention ? "attention_step_size" : "step_size", ac.step_size);
    ac.eps = cfg.get_num(sec, "eps", ac.eps);
    ac.gamma = cfg.get_num(sec, "gamma", ac.gamma);
    ac.restarts = int(cfg.get_num(sec, "restarts", ac.restarts));
    ac.ig_steps = int(cfg.get_num(sec, "ig_steps", ac.ig_steps));
    return ac;
}

namespace {

struct Job {
    Strategy strategy;
    double lr = 0.0;
    std::uint64_t seed = 0;
};

struct JobResult {
    std::vector<RunRecord> records;
    std::string error;  // empty on success
};

JobResult execute_job(const RunConfig& cfg, const DataSplit& data, const Job& job,
                      std::size_t probe_count) {
    JobResult jr;
    const std::string chash = cfg.hash();
    auto rec = [&](const std::string& method, const std::string& metric, long sample,
                   double value) {
        jr.records.push_back(RunRecord{chash, job.seed, strategy_name(job.strategy), job.lr,
                                       method, metric, sample, value});
    };
    try {
        ModelSpec spec = model_spec_from_config(cfg, data.train.dim(), data.num_classes);
        Model model{spec, init_params(spec, job.seed)};
        TrainConfig tc = train_config_from(cfg, job.strategy, job.lr, job.seed);
        TrainResult tr = sgd_train(model, data, tc);
        Model trained = tr.model;
        if (job.strategy == Strategy::par) {
            SwapResult sw = activation_swap(trained, tc.swap_target, tc.swap_beta, SwapMode::post);
            trained = sw.model;
        }

        rec("-", "stop_reason", -1, double(int(tr.trace.stop)));
        rec("-", "epochs", -1, double(tr.trace.epochs.size()));
        if (!tr.trace.epochs.empty()) {
            rec("-", "train_loss_final", -1, tr.trace.epochs.back().train_loss);
            rec("-", "val_accuracy", -1, tr.trace.epochs.back().val_accuracy);
        }

        const bool matched_loss = tr.trace.stop == StopReason::loss_threshold;
        rec("-", "matched_loss", -1, matched_loss ? 1.0 : 0.0);
        if (tr.trace.stop == StopReason::diverged) return jr;  // recorded, no probes

        const std::size_t K = std::min<std::size_t>(probe_count, data.val.size());
        std::vector<std::string> methods = cfg.get_list("attack", "methods");
        if (methods.empty()) methods = {"vanilla"};
        AttackConfig gac = attack_config_from(cfg, false);
        AttackConfig aac = attack_config_from(cfg, true);
        const int avg_trials = int(cfg.get_num("attack", "average_trials", 0));
        const bool probe_curvature = cfg.get("probes", "curvature", "true") == "true";
        const bool probe_entropy = cfg.get("probes", "entropy", "true") == "true";

        for (std::size_t i = 0; i < K; ++i) {
            Tensor x = data.val.row(i);
            for (const std::string& mname : methods) {
                GradientMethod gm = gradient_method_from_name(mname);
                AttackConfig ac = gac;
                ac.seed = Rng::derive(job.seed, 0x4000 + i);
                try {
                    SensitivityRecord sr = notR_gradient(trained, x, gm, ac);
                    rec(mname, "notR", long(i), sr.notR);
                    rec(mname, "alpha", long(i), sr.alpha);
                    rec(mname, "logit_drift", long(i), sr.logit_drift);
                    rec(mname, "steps_used", long(i), double(sr.steps_used));
                    if (avg_trials > 0) {
                        const double avg =
                            average_sensitivity(trained, x, gm, ac, avg_trials);
                        rec(mname, "avg_notR", long(i), avg);
                    }
                } catch (const std::exception&) {
                    rec(mname, "degenerate", long(i), 1.0);
                }
            }
            if (spec.kind == ModelKind::vit) {
                AttackConfig ac = aac;
                ac.seed = Rng::derive(job.seed, 0x8000 + i);
                SensitivityRecord sr = notR_attention(trained, 0, x, ac);
                rec("attention", "notR_attention", long(i), sr.notR);
                if (probe_entropy) {
                    EntropyStats es = attention_entropy(eval_stack(trained, x), &trained);
                    rec("-", "ent_dist_l0", long(i), es.distance_to_uniform[0]);
                    double me = 0;
                    for (double e : es.mean_entropy) me += e;
                    rec("-", "entropy_mean", long(i), me / double(es.mean_entropy.size()));
                }
            }
            if (probe_curvature) {
                PowerResult pr = input_hessian_lambda_max(trained, x);
                rec("-", "lambda_max", long(i), pr.value);
                if (spec.kind == ModelKind::mlp) rec("-", "snr", long(i), snr_c(trained, x).value);
            }
        }
        if (probe_curvature && K > 0) {
            std::vector<Tensor> probe_batch;
            for (std::size_t i = 0; i < K; ++i) probe_batch.push_back(data.val.row(i));
            rec("-", "gn_trace", -1, param_gn_trace(trained, probe_batch));
        }
    } catch (const std::exception& e) {
        jr.error = e.what();
    }
    return jr;
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / double(v.size() - 1));
}

}  // namespace

void write_summary_and_ranks(const std::string& out_dir, const std::vector<RunRecord>& records) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    // means and stds keyed by (strategy, lr, method, metric)
    std::map<std::string, std::vector<double>> groups;
    std::map<std::string, bool> matched;  // strategy/lr/seed stopped at the loss threshold
    for (const RunRecord& r : records)
        if (r.metric == "matched_loss")
            matched[r.strategy + "|" + format_f64(r.lr) + "|" + std::to_string(r.seed)] =
                r.value > 0.5;
    for (const RunRecord& r : records) {
        groups[r.strategy + "," + format_f64(r.lr) + "," + r.method + "," + r.metric].push_back(
            r.value);
    }
    {
        std::ofstream os(out_dir + "/summary.csv");
        os << "strategy,lr,method,metric,count,mean,std\n";
        for (const auto& [key, vals] : groups)
            os << key << ',' << vals.size() << ',' << format_f64(mean_of(vals)) << ','
               << format_f64(std_of(vals)) << '\n';
    }

    // ranks on notR per attribution method across strategies (matched-loss runs
    // only: comparisons are defined at equal training loss)
    std::map<std::string, std::map<std::string, std::vector<double>>> by_method;
    for (const RunRecord& r : records) {
        if (r.metric != "notR") continue;
        const std::string mkey =
            r.strategy + "|" + format_f64(r.lr) + "|" + std::to_string(r.seed);
        auto it = matched.find(mkey);
        if (it == matched.end() || !it->second) continue;
        by_method[r.method][r.strategy].push_back(r.value);
    }
    std::ofstream os(out_dir + "/ranks.csv");
    os << "method,strategy,mean_notR,rank\n";
    for (const auto& [method, strat_map] : by_method) {
        std::vector<std::string> names;
        std::vector<std::vector<double>> samples;
        for (const auto& [sname, vals] : strat_map) {
            if (vals.size() < 2) continue;
            names.push_back(sname);
            samples.push_back(vals);
        }
        if (names.empty()) continue;
        std::vector<RankedMethod> ranked = rank_methods(names, samples, /*lower better*/ true);
        for (const RankedMethod& rm : ranked)
            os << method << ',' << rm.name << ',' << format_f64(rm.mean) << ',' << rm.rank
               << '\n';
    }
}

SweepOutcome run_sweep(const RunConfig& cfg, const SweepOptions& opts) {
    namespace fs = std::filesystem;
    std::vector<std::string> strategy_names = cfg.get_list("train", "strategies");
    if (strategy_names.empty())
        throw std::invalid_argument("sweep: nothing to run (train.strategies empty)");
    std::vector<std::string> lr_list = cfg.get_list("train", "lrs");
    if (lr_list.empty()) lr_list = {"0.1"};
    std::vector<std::string> seed_list = cfg.get_list("train", "seeds");
    if (seed_list.empty()) seed_list = {"1"};

    DataSplit data = dataset_from_config(cfg);
    const std::size_t probe_count =
        opts.limit ? opts.limit : std::size_t(cfg.get_num("attack", "probe_samples", 100));

    std::vector<Job> jobs;
    for (const std::string& s : strategy_names)
        for (const std::string& lr : lr_list)
            for (const std::string& seed : seed_list)
                jobs.push_back(Job{strategy_from_name(s), std::stod(lr),
                                   std::stoull(seed) + opts.seed_offset});

    std::vector<JobResult> results(jobs.size());
    std::atomic<std::size_t> next{0};
    const int workers = std::max(1, opts.jobs);
    auto worker = [&]() {
        for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= jobs.size()) return;
            results[k] = execute_job(cfg, data, jobs[k], probe_count);
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();

    SweepOutcome out;
    out.runs_total = jobs.size();
    for (std::size_t k = 0; k < jobs.size(); ++k) {
        if (!results[k].error.empty()) {
            ++out.runs_failed;
            out.errors.push_back(strategy_name(jobs[k].strategy) + "@lr=" +
                                 format_f64(jobs[k].lr) + " seed " +
                                 std::to_string(jobs[k].seed) + ": " + results[k].error);
            continue;
        }
        for (RunRecord& r : results[k].records) out.records.push_back(std::move(r));
    }

    fs::create_directories(opts.out_dir);
    write_records_csv(opts.out_dir + "/records.csv", out.records);
    write_summary_and_ranks(opts.out_dir, out.records);

    // two-column plot data: lr vs mean lambda_max per strategy, and per-sample
    // entropy distance vs attention sensitivity
    {
        std::map<std::string, std::map<double, std::vector<double>>> lam;
        for (const RunRecord& r : out.records)
            if (r.metric == "lambda_max") lam[r.strategy][r.lr].push_back(r.value);
        for (const auto& [sname, grid] : lam) {
            std::ofstream os(opts.out_dir + "/plot_lr_vs_lambda_" + sname + ".txt");
            for (const auto& [lr, vals] : grid)
                os << format_f64(lr) << ' ' << format_f64(mean_of(vals)) << '\n';
        }
        std::map<std::string, std::vector<std::pair<double, double>>> ent;
        std::map<std::string, std::map<long, double>> dist_by_sample;
        for (const RunRecord& r : out.records)
            if (r.metric == "ent_dist_l0")
                dist_by_sample[r.strategy + "|" + format_f64(r.lr) + "|" +
                               std::to_string(r.seed)][r.sample] = r.value;
        for (const RunRecord& r : out.records)
            if (r.metric == "notR_attention") {
                const std::string key =
                    r.strategy + "|" + format_f64(r.lr) + "|" + std::to_string(r.seed);
                auto it = dist_by_sample.find(key);
                if (it != dist_by_sample.end() && it->second.count(r.sample))
                    ent[r.strategy].push_back({it->second[r.sample], r.value});
            }
        for (const auto& [sname, pts] : ent) {
            std::ofstream os(opts.out_dir + "/plot_entropy_vs_notR_" + sname + ".txt");
            for (const auto& [d, v] : pts) os << format_f64(d) << ' ' << format_f64(v) << '\n';
        }
    }
    return out;
}

}  // namespace attrlab
