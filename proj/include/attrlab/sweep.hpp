#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "attrlab/attack.hpp"
#include "attrlab/data.hpp"
#include "attrlab/training.hpp"

namespace attrlab {

// Plain-text run configuration: [section] headers, key = value lines, '#'
// comments. The raw content is hashed so every output row can be keyed by it.
struct RunConfig {
    std::map<std::string, std::map<std::string, std::string>> sections;
    std::string content;

    static RunConfig parse_string(const std::string& text);
    static RunConfig parse_file(const std::string& path);

    bool has(const std::string& section, const std::string& key) const;
    std::string get(const std::string& section, const std::string& key,
                    const std::string& fallback) const;
    double get_num(const std::string& section, const std::string& key, double fallback) const;
    std::vector<std::string> get_list(const std::string& section, const std::string& key) const;

    std::string hash() const;  // FNV-1a over the raw content, hex
};

std::string format_f64(double v);  // 17 significant digits

struct RunRecord {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string strategy;
    double lr = 0.0;
    std::string method;  // attribution method or "-"
    std::string metric;
    long sample = -1;  // -1 for run-level rows
    double value = 0.0;
};

void write_records_csv(const std::string& path, const std::vector<RunRecord>& records);
std::vector<RunRecord> read_records_csv(const std::string& path);

// config-driven construction used by both the sweep and the CLI subcommands
DataSplit dataset_from_config(const RunConfig& cfg, std::size_t limit_override = 0);
ModelSpec model_spec_from_config(const RunConfig& cfg, std::size_t input_dim,
                                 std::size_t num_classes);
std::string model_spec_to_config(const ModelSpec& spec);
ModelSpec model_spec_from_string(const std::string& text);
TrainConfig train_config_from(const RunConfig& cfg, Strategy strategy, double lr,
                              std::uint64_t seed);
AttackConfig attack_config_from(const RunConfig& cfg, bool attention);

struct SweepOptions {
    std::string out_dir = ".";
    int jobs = 2;
    std::size_t limit = 0;             // probe-sample override (0 = config value)
    std::uint64_t seed_offset = 0;
};

struct SweepOutcome {
    std::size_t runs_total = 0;
    std::size_t runs_failed = 0;
    std::vector<std::string> errors;
    std::vector<RunRecord> records;
};

// Train/evaluate every (strategy, lr, seed) combination, append RunRecords,
// then emit records.csv, summary.csv, ranks.csv and two-column plot files.
SweepOutcome run_sweep(const RunConfig& cfg, const SweepOptions& opts);

// Aggregation used by `report`.
void write_summary_and_ranks(const std::string& out_dir, const std::vector<RunRecord>& records);

}  // namespace attrlab
