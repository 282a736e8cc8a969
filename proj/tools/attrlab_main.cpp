#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "attrlab/attribution.hpp"
#include "attrlab/curvature.hpp"
#include "attrlab/rng.hpp"
#include "attrlab/sweep.hpp"

namespace fs = std::filesystem;
using namespace attrlab;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir = ".";
    std::uint64_t seed = 1;
    std::size_t limit = 0;
    int jobs = 2;
};

RunConfig load_config(const CommonOpts& o) {
    if (o.config_path.empty()) throw std::invalid_argument("--config is required");
    return RunConfig::parse_file(o.config_path);
}

Model train_single(const RunConfig& cfg, const DataSplit& data, std::uint64_t seed,
                   TrainTrace* trace_out) {
    std::vector<std::string> strategies = cfg.get_list("train", "strategies");
    const Strategy strategy =
        strategies.empty() ? Strategy::base : strategy_from_name(strategies.front());
    std::vector<std::string> lrs = cfg.get_list("train", "lrs");
    const double lr = lrs.empty() ? 0.1 : std::stod(lrs.front());

    ModelSpec spec = model_spec_from_config(cfg, data.train.dim(), data.num_classes);
    Model model{spec, init_params(spec, seed)};
    TrainResult res = sgd_train(model, data, train_config_from(cfg, strategy, lr, seed));
    if (trace_out) *trace_out = res.trace;
    return res.model;
}

void write_trace_csv(const std::string& path, const TrainTrace& trace) {
    std::ofstream os(path);
    os << "epoch,train_loss,val_accuracy,lr\n";
    for (const auto& row : trace.epochs)
        os << row.epoch << ',' << format_f64(row.train_loss) << ','
           << format_f64(row.val_accuracy) << ',' << format_f64(row.lr) << '\n';
}

int cmd_train(const CommonOpts& o) {
    RunConfig cfg = load_config(o);
    DataSplit data = dataset_from_config(cfg, o.limit);
    TrainTrace trace;
    Model model = train_single(cfg, data, o.seed, &trace);
    fs::create_directories(o.out_dir);
    save_checkpoint(o.out_dir + "/model.ckpt", model.params);
    {
        std::ofstream os(o.out_dir + "/model.spec");
        os << model_spec_to_config(model.spec);
    }
    write_trace_csv(o.out_dir + "/train_trace.csv", trace);
    std::printf("trained: stop=%s epochs=%zu val_acc=%.4f\n",
                stop_reason_name(trace.stop).c_str(), trace.epochs.size(),
                trace.epochs.empty() ? 0.0 : trace.epochs.back().val_accuracy);
    return 0;
}

int cmd_attack(const CommonOpts& o) {
    RunConfig cfg = load_config(o);
    DataSplit data = dataset_from_config(cfg, o.limit);
    Model model = train_single(cfg, data, o.seed, nullptr);

    std::vector<std::string> methods = cfg.get_list("attack", "methods");
    if (methods.empty()) methods = {"vanilla"};
    const std::size_t K =
        std::min<std::size_t>(o.limit ? o.limit
                                      : std::size_t(cfg.get_num("attack", "probe_samples", 20)),
                              data.val.size());
    fs::create_directories(o.out_dir);
    std::ofstream os(o.out_dir + "/attack.csv");
    os << "sample,method,notR,alpha,logit_drift,steps_used,seed\n";
    AttackConfig gac = attack_config_from(cfg, false);
    for (std::size_t i = 0; i < K; ++i) {
        Tensor x = data.val.row(i);
        for (const std::string& mname : methods) {
            AttackConfig ac = gac;
            ac.seed = Rng::derive(o.seed, 0x4000 + i);
            try {
                SensitivityRecord r = notR_gradient(model, x, gradient_method_from_name(mname), ac);
                os << i << ',' << mname << ',' << format_f64(r.notR) << ','
                   << format_f64(r.alpha) << ',' << format_f64(r.logit_drift) << ','
                   << r.steps_used << ',' << r.seed << '\n';
            } catch (const std::exception& e) {
                os << i << ',' << mname << ",nan,nan,nan,0," << ac.seed << '\n';
            }
        }
        if (model.spec.kind == ModelKind::vit) {
            AttackConfig ac = attack_config_from(cfg, true);
            ac.seed = Rng::derive(o.seed, 0x8000 + i);
            SensitivityRecord r = notR_attention(model, 0, x, ac);
            os << i << ",attention," << format_f64(r.notR) << ',' << format_f64(r.alpha) << ','
               << format_f64(r.logit_drift) << ',' << r.steps_used << ',' << r.seed << '\n';
        }
    }
    std::printf("attack results in %s/attack.csv (%zu samples)\n", o.out_dir.c_str(), K);
    return 0;
}

int cmd_curvature(const CommonOpts& o) {
    RunConfig cfg = load_config(o);
    DataSplit data = dataset_from_config(cfg, o.limit);
    Model model = train_single(cfg, data, o.seed, nullptr);
    const std::size_t K = std::min<std::size_t>(o.limit ? o.limit : 20, data.val.size());
    fs::create_directories(o.out_dir);
    std::ofstream os(o.out_dir + "/curvature.csv");
    os << "sample,lambda_max,power_converged,snr\n";
    std::vector<Tensor> batch;
    for (std::size_t i = 0; i < K; ++i) {
        Tensor x = data.val.row(i);
        batch.push_back(x);
        PowerResult pr = input_hessian_lambda_max(model, x);
        const double snr = model.spec.kind == ModelKind::mlp ? snr_c(model, x).value : 0.0;
        os << i << ',' << format_f64(pr.value) << ',' << (pr.converged ? 1 : 0) << ','
           << format_f64(snr) << '\n';
    }
    const double tr = K ? param_gn_trace(model, batch) : 0.0;
    std::printf("gn_trace over %zu probes: %s\n", K, format_f64(tr).c_str());
    return 0;
}

int cmd_entropy_oracle(std::size_t T, double grid_step, int grid_points,
                       const std::string& out_path) {
    std::vector<double> grid;
    const double max_ent = std::log(double(T));
    for (int k = 0; k < grid_points; ++k)
        grid.push_back(max_ent * double(k) / double(grid_points - 1));
    EntropyBoundResult res = entropy_bound_oracle(T, grid, grid_step);
    std::ofstream* fos = nullptr;
    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path);
        fos = &file;
    }
    for (std::size_t i = 0; i < res.ent_min.size(); ++i) {
        const std::string line =
            format_f64(res.ent_min[i]) + " " + format_f64(res.max_deviation[i]);
        if (fos)
            (*fos) << line << '\n';
        else
            std::printf("%s\n", line.c_str());
    }
    return 0;
}

int cmd_sweep(const CommonOpts& o) {
    RunConfig cfg = load_config(o);
    SweepOptions opts;
    opts.out_dir = o.out_dir;
    opts.jobs = o.jobs;
    opts.limit = o.limit;
    SweepOutcome outcome = run_sweep(cfg, opts);
    for (const std::string& err : outcome.errors)
        std::fprintf(stderr, "run failed: %s\n", err.c_str());
    std::printf("sweep: %zu runs, %zu failed; records in %s/records.csv\n", outcome.runs_total,
                outcome.runs_failed, o.out_dir.c_str());
    if (outcome.runs_failed == outcome.runs_total) return 1;
    return 0;
}

int cmd_report(const CommonOpts& o) {
    std::vector<RunRecord> records = read_records_csv(o.out_dir + "/records.csv");
    write_summary_and_ranks(o.out_dir, records);
    std::ifstream is(o.out_dir + "/ranks.csv");
    std::string line;
    while (std::getline(is, line)) std::printf("%s\n", line.c_str());
    std::printf("summary in %s/summary.csv\n", o.out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attribution-robustness laboratory"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::size_t oracle_T = 3;
    double oracle_step = 0.02;
    int oracle_points = 20;
    std::string oracle_out;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        if (needs_config)
            cmd->add_option("--config", opts.config_path, "run configuration file")->required();
        cmd->add_option("--out-dir", opts.out_dir, "output directory");
        cmd->add_option("--seed", opts.seed, "seed");
        cmd->add_option("--limit", opts.limit, "probe/sample limit override");
        cmd->add_option("--jobs", opts.jobs, "worker threads");
    };

    CLI::App* train = app.add_subcommand("train", "train one model from the config");
    add_common(train, true);
    CLI::App* attack = app.add_subcommand("attack", "train then attack attribution maps");
    add_common(attack, true);
    CLI::App* curvature = app.add_subcommand("curvature", "train then run curvature probes");
    add_common(curvature, true);
    CLI::App* oracle = app.add_subcommand("entropy-oracle", "simplex enumeration bound table");
    oracle->add_option("--tokens", oracle_T, "simplex dimension T (2..4)");
    oracle->add_option("--grid-step", oracle_step, "lattice resolution (<= 0.02)");
    oracle->add_option("--points", oracle_points, "ent_min grid size");
    oracle->add_option("--out", oracle_out, "output file (stdout otherwise)");
    CLI::App* sweep = app.add_subcommand("sweep", "full strategy x lr x seed sweep");
    add_common(sweep, true);
    CLI::App* report = app.add_subcommand("report", "summaries and ranks from records.csv");
    add_common(report, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(opts);
        if (attack->parsed()) return cmd_attack(opts);
        if (curvature->parsed()) return cmd_curvature(opts);
        if (oracle->parsed())
            return cmd_entropy_oracle(oracle_T, oracle_step, oracle_points, oracle_out);
        if (sweep->parsed()) return cmd_sweep(opts);
        if (report->parsed()) return cmd_report(opts);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
