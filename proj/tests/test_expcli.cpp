#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "attrlab/rng.hpp"
#include "attrlab/stats.hpp"
#include "attrlab/sweep.hpp"
#include "checks.hpp"

using namespace attrlab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

void test_idx() {
    const std::string dir = "/tmp/attrlab_idx";
    fs::create_directories(dir);

    // labels fixture: magic 0x801, three items (2, 0, 9)
    write_idx_labels(dir + "/labels", {2, 0, 9});
    std::vector<std::vector<std::uint8_t>> imgs;
    Rng rng(5);
    for (int i = 0; i < 3; ++i) {
        std::vector<std::uint8_t> img(28 * 28);
        for (auto& px : img) px = std::uint8_t(rng.index(256));
        imgs.push_back(std::move(img));
    }
    write_idx_images(dir + "/images", imgs, 28, 28);

    Dataset ds = load_idx(dir + "/images", dir + "/labels", 10);
    CHECK(ds.size() == 3);
    CHECK(ds.labels[0] == 2 && ds.labels[1] == 0 && ds.labels[2] == 9);
    CHECK(ds.inputs.rows() == 3 && ds.inputs.cols() == 784);

    // limit honors the header count
    Dataset ds2 = load_idx(dir + "/images", dir + "/labels", 2);
    CHECK(ds2.size() == 2);

    // round-trip: the raw payload survives write -> load bit-identically
    // (undo standardization by re-reading the raw file)
    std::string raw = slurp(dir + "/images");
    CHECK(raw.size() == 16 + 3 * 784);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 784; ++j)
            CHECK_MSG(std::uint8_t(raw[16 + i * 784 + j]) == imgs[std::size_t(i)][std::size_t(j)],
                      "payload byte mismatch");

    // bad magic
    {
        std::ofstream os(dir + "/bad", std::ios::binary);
        const char junk[8] = {0, 0, 1, 1, 0, 0, 0, 1};
        os.write(junk, 8);
    }
    CHECK_THROWS(load_idx(dir + "/bad", dir + "/labels", 5));
    CHECK_THROWS(load_idx(dir + "/images", dir + "/bad", 5));

    // count mismatch between files
    write_idx_labels(dir + "/labels2", {1, 2});
    CHECK_THROWS(load_idx(dir + "/images", dir + "/labels2", 5));

    // truncated payload
    {
        std::string full = slurp(dir + "/images");
        std::ofstream os(dir + "/trunc", std::ios::binary);
        os.write(full.data(), std::streamsize(full.size() - 100));
    }
    CHECK_THROWS(load_idx(dir + "/trunc", dir + "/labels", 5));
}

void test_blobs() {
    DataSplit a = make_blobs(50, 2, 2, 0.01, 9);
    DataSplit b = make_blobs(50, 2, 2, 0.01, 9);
    // bitwise determinism
    for (std::size_t i = 0; i < a.train.inputs.numel(); ++i)
        CHECK(a.train.inputs.data[i] == b.train.inputs.data[i]);
    CHECK(a.train.labels == b.train.labels);
    CHECK(a.train.size() == 80 && a.val.size() == 20);

    // standardized features
    for (std::size_t j = 0; j < 2; ++j) {
        double m = 0;
        for (std::size_t i = 0; i < a.train.size(); ++i) m += a.train.inputs.at(i, j);
        for (std::size_t i = 0; i < a.val.size(); ++i) m += a.val.inputs.at(i, j);
        CHECK_CLOSE(m / 100.0, 0.0, 1e-12);
    }

    // near-zero spread: linearly separable, logistic model reaches 100% val acc
    ModelSpec s;
    s.kind = ModelKind::mlp;
    s.input_dim = 2;
    s.num_classes = 2;
    Model lin{s, init_params(s, 10)};
    TrainConfig tc;
    tc.base_lr = 0.5;
    tc.max_epochs = 120;
    tc.stop_loss_threshold = 0.02;
    TrainResult res = sgd_train(lin, a, tc);
    CHECK_CLOSE(accuracy(res.model, a.val), 1.0, 1e-12);

    // class means recovered within spread/sqrt(n)
    DataSplit c = make_blobs(400, 2, 3, 0.3, 11);
    for (int cls = 0; cls < 2; ++cls) {
        Tensor mean_c = Tensor::zeros({3});
        std::size_t count = 0;
        for (std::size_t i = 0; i < c.train.size(); ++i)
            if (c.train.labels[i] == cls) {
                for (std::size_t j = 0; j < 3; ++j) mean_c.data[j] += c.train.inputs.at(i, j);
                ++count;
            }
        for (std::size_t j = 0; j < 3; ++j) mean_c.data[j] /= double(count);
        // empirical center of the OTHER class must be farther than this one's
        Tensor mean_o = Tensor::zeros({3});
        std::size_t count_o = 0;
        for (std::size_t i = 0; i < c.train.size(); ++i)
            if (c.train.labels[i] != cls) {
                for (std::size_t j = 0; j < 3; ++j) mean_o.data[j] += c.train.inputs.at(i, j);
                ++count_o;
            }
        for (std::size_t j = 0; j < 3; ++j) mean_o.data[j] /= double(count_o);
        CHECK(norm2(sub(mean_c, mean_o)) > 0.3 / std::sqrt(400.0));
    }

    CHECK_THROWS(make_blobs(0, 2, 2, 1.0, 1));
}

void test_welch() {
    // identical samples: t = 0, p = 1
    WelchResult same = welch_ttest({1, 2, 3}, {1, 2, 3});
    CHECK_CLOSE(same.t, 0.0, 1e-15);
    CHECK_CLOSE(same.p_two_sided, 1.0, 1e-12);
    CHECK(!same.significant);

    // frozen reference fixture
    WelchResult r = welch_ttest({1, 2, 3, 4, 5}, {2, 3, 4, 5, 6});
    CHECK_CLOSE(r.t, -1.0, 1e-12);
    CHECK_CLOSE(r.dof, 8.0, 1e-12);
    CHECK_CLOSE(r.p_two_sided, 0.34659350708733416, 1e-10);
    CHECK(!r.significant);

    // +100 sigma separation
    std::vector<double> a{0.0, 0.1, -0.1, 0.05, -0.05}, b;
    for (double v : a) b.push_back(v + 100.0);
    WelchResult sep = welch_ttest(a, b);
    CHECK(sep.p_two_sided < 1e-6);
    CHECK(sep.significant);

    // symmetry: swapping flips t, preserves p exactly
    WelchResult ab = welch_ttest({1, 2, 3, 7}, {2, 2, 4, 9});
    WelchResult ba = welch_ttest({2, 2, 4, 9}, {1, 2, 3, 7});
    CHECK(ab.t == -ba.t);
    CHECK(ab.p_two_sided == ba.p_two_sided);

    // one-sided consistency with the two-sided value
    const double p1 = welch_p_greater({2, 3, 4, 5, 6}, {1, 2, 3, 4, 5});
    CHECK_CLOSE(p1, 0.17329675354366708, 1e-10);

    // degenerate variance in both samples with different means
    CHECK_THROWS(welch_ttest({1, 1, 1}, {2, 2, 2}));
    CHECK_THROWS(welch_ttest({1}, {2, 3}));
}

void test_spearman() {
    CHECK_CLOSE(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0, 1e-12);
    CHECK_CLOSE(spearman({1, 2, 3, 4}, {9, 7, 5, 3}), -1.0, 1e-12);
    const double mid = spearman({1, 2, 3, 4}, {2, 1, 4, 3});
    CHECK(mid > 0 && mid < 1);
    CHECK_THROWS(spearman({1, 1, 1}, {1, 2, 3}));
}

void test_ranks() {
    // two tight groups: {1,1,2}
    std::vector<std::string> names{"a", "b", "c"};
    std::vector<std::vector<double>> samples{
        {0.10, 0.11, 0.10, 0.12, 0.11},
        {0.11, 0.10, 0.12, 0.10, 0.11},
        {0.50, 0.52, 0.51, 0.49, 0.50},
    };
    std::vector<RankedMethod> ranked = rank_methods(names, samples, true);
    int ra = 0, rb = 0, rc = 0;
    for (const auto& r : ranked) {
        if (r.name == "a") ra = r.rank;
        if (r.name == "b") rb = r.rank;
        if (r.name == "c") rc = r.rank;
    }
    CHECK(ra == 1 && rb == 1 && rc == 2);

    // all identical: everyone rank 1
    std::vector<std::vector<double>> idsamp{{0.2, 0.2, 0.2}, {0.2, 0.2, 0.2}, {0.2, 0.2, 0.2}};
    for (const auto& r : rank_methods(names, idsamp, true)) CHECK(r.rank == 1);

    // single strategy
    std::vector<RankedMethod> single = rank_methods({"only"}, {{1.0, 2.0}}, true);
    CHECK(single.size() == 1 && single[0].rank == 1);

    // higher-is-better direction flips the order
    std::vector<RankedMethod> hi = rank_methods(
        {"low", "high"}, {{0.1, 0.11, 0.1, 0.12}, {0.9, 0.91, 0.9, 0.92}}, false);
    for (const auto& r : hi)
        CHECK((r.name == "high" && r.rank == 1) || (r.name == "low" && r.rank == 2));
}

void test_config() {
    const std::string text = R"(# demo
[dataset]
kind = blobs
n_per_class = 30
classes = 2
dim = 4
spread = 0.4
seed = 3

[model]
kind = mlp
hidden = 8
activation = softplus

[train]
strategies = base
lrs = 0.2
seeds = 1
max_epochs = 40
loss_threshold = 0.05

[attack]
methods = vanilla
probe_samples = 3
steps = 4
)";
    RunConfig cfg = RunConfig::parse_string(text);
    CHECK(cfg.get("dataset", "kind", "") == "blobs");
    CHECK_CLOSE(cfg.get_num("dataset", "spread", 0), 0.4, 1e-15);
    CHECK(cfg.get_list("train", "strategies").size() == 1);
    CHECK(cfg.get("missing", "key", "dflt") == "dflt");
    CHECK(cfg.hash().size() == 16);
    CHECK(cfg.hash() == RunConfig::parse_string(text).hash());
    CHECK(cfg.hash() != RunConfig::parse_string(text + "\n[x]\ny = 1\n").hash());
    CHECK_THROWS(RunConfig::parse_string("[unterminated\n"));
    CHECK_THROWS(RunConfig::parse_string("keyval\n"));

    // model spec round trip through the config format
    ModelSpec vs;
    vs.kind = ModelKind::vit;
    vs.input_dim = 64;
    vs.num_classes = 3;
    vs.image_side = 8;
    vs.patch = 4;
    vs.embed_dim = 12;
    vs.depth = 2;
    vs.heads = 3;
    vs.attention = AttentionKind::kernelized;
    vs.attn_phi = Activation::gelu;
    ModelSpec back = model_spec_from_string(model_spec_to_config(vs));
    CHECK(back.kind == ModelKind::vit);
    CHECK(back.image_side == 8 && back.patch == 4 && back.depth == 2);
    CHECK(back.attention == AttentionKind::kernelized);
    CHECK(back.attn_phi == Activation::gelu);
}

void test_sweep_smoke_and_determinism() {
    const std::string text = R"(
[dataset]
kind = blobs
n_per_class = 25
classes = 2
dim = 4
spread = 0.4
seed = 3

[model]
kind = mlp
hidden = 8
activation = softplus

[train]
strategies = base,ecr
lrs = 0.2
seeds = 1
max_epochs = 60
loss_threshold = 0.08

[strategy.ecr]
lambda = 0.05

[attack]
methods = vanilla
probe_samples = 3
steps = 4
step_size = 0.05
eps = 0.5
)";
    RunConfig cfg = RunConfig::parse_string(text);

    SweepOptions opts;
    opts.out_dir = "/tmp/attrlab_sweep_a";
    opts.jobs = 2;
    SweepOutcome a = run_sweep(cfg, opts);
    CHECK(a.runs_total == 2);
    CHECK(a.runs_failed == 0);
    CHECK(!a.records.empty());

    // deterministic regardless of worker interleaving
    SweepOptions opts_b = opts;
    opts_b.out_dir = "/tmp/attrlab_sweep_b";
    opts_b.jobs = 1;
    run_sweep(cfg, opts_b);
    CHECK_MSG(slurp("/tmp/attrlab_sweep_a/records.csv") ==
                  slurp("/tmp/attrlab_sweep_b/records.csv"),
              "records.csv differs between 2-job and 1-job runs");

    // re-running the identical config reproduces every byte
    SweepOptions opts_c = opts;
    opts_c.out_dir = "/tmp/attrlab_sweep_c";
    run_sweep(cfg, opts_c);
    CHECK(slurp("/tmp/attrlab_sweep_a/records.csv") == slurp("/tmp/attrlab_sweep_c/records.csv"));
    CHECK(slurp("/tmp/attrlab_sweep_a/summary.csv") == slurp("/tmp/attrlab_sweep_c/summary.csv"));

    // empty strategy list refuses
    RunConfig empty = RunConfig::parse_string("[train]\nstrategies =\n");
    CHECK_THROWS(run_sweep(empty, opts));

    // 17 significant digits round-trip through the records file
    std::vector<RunRecord> parsed = read_records_csv("/tmp/attrlab_sweep_a/records.csv");
    CHECK(parsed.size() == a.records.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        CHECK(parsed[i].value == a.records[i].value);
        CHECK(parsed[i].metric == a.records[i].metric);
    }
}

}  // namespace

int main() {
    test_idx();
    test_blobs();
    test_welch();
    test_spearman();
    test_ranks();
    test_config();
    test_sweep_smoke_and_determinism();
    return testing::finish("expcli");
}
