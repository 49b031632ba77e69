#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "idkit/design_space.hpp"
#include "idkit/eval_engine.hpp"
#include "idkit/optimizers.hpp"
#include "idkit/records.hpp"
#include "idkit/surrogate.hpp"

namespace idkit {

inline constexpr const char* kToolkitVersion = "0.1.0";

// Samples n points with sample_uniform and evaluates them in chunks. Records
// carry trial = index, loss = 0 and t = 0 so the bytes depend only on the
// seed. More than 1% failed evaluations throws; fewer are dropped.
std::vector<EvalRecord> generate_dataset(EvalEngine& engine, std::size_t n, std::uint64_t seed);
// Streaming variant for large n; returns the number of records written.
std::size_t generate_dataset_file(EvalEngine& engine, std::size_t n, std::uint64_t seed,
                                  const std::filesystem::path& path);

struct DatasetSplit {
    std::vector<EvalRecord> train;  // 81%
    std::vector<EvalRecord> val;    // 9%
    std::vector<EvalRecord> test;   // 10%
};
// 90/10 into train+val/test, then 90/10 of that into train/val.
DatasetSplit split_dataset(std::span<const EvalRecord> dataset, std::uint64_t seed);

struct Target {
    Response y;
    std::optional<DesignPoint> source;  // generating point, when realizable by construction
    std::string label;
};

std::vector<Target> iid_targets(EvalEngine& engine, std::size_t k, std::uint64_t seed);

// Ideal radiative cooler on the MOTF grid: 0 below 2.5 um, 1 within 8-13 um,
// 0 elsewhere, with logistic edges of width 0.1 um. A toolkit convention.
Target default_motf_target();

// JSON ([...], [[...], ...], {"y": [...]} or [{"y": [...]}, ...]) or
// whitespace-separated rows, one target per row (e.g. an SCF palette of
// r g b lines).
std::vector<Target> load_targets(const std::filesystem::path& path, const DesignSpace& space);

// argmin of mse_loss over records with responses; ties go to the lowest trial.
EvalRecord train_best(std::span<const EvalRecord> dataset, std::span<const double> target);

// Algorithms: rs, sracos, bo, tpe, es (ask/tell) and gd, im, tandem
// (surrogate based; need a dataset).
bool is_surrogate_algorithm(std::string_view algo);

struct ExperimentSpec {
    std::string problem = "motf";
    std::vector<std::string> algorithms = {"tpe"};
    std::string optimizer_config;  // key=value text handed to OptimizerConfig::parse
    std::optional<std::size_t> budget;  // unset: 1000 MOTF, 200 TPV/SCF; 0 runs baselines only
    std::size_t n_seeds = 5;
    std::uint64_t seed = 0;  // every other seed is derived from this one
    std::size_t batch = 1;   // proposals per ask
    std::size_t warm_start_k = 0;
    std::string target = "iid";  // "iid", "default" (MOTF cooler) or a target file
    std::filesystem::path dataset;  // JSONL; enables train-best, warm start, surrogates
    std::filesystem::path out;
    SimulatorBinding binding;
    TrainConfig train;
    std::size_t gd_steps = 200;
    bool parallel_seeds = false;  // one thread and one engine per seed

    std::size_t effective_budget() const;
    std::vector<std::uint64_t> seeds() const;
    // Assigns one key (problem, algo, budget, seeds, seed, batch, workers,
    // warm-start-k, target, dataset, out, simulator, adapter-cmd, timeout,
    // sleep-ms, cache, cache-file, epochs, batch-size, lr, momentum, hidden,
    // gd-steps, parallel-seeds); <algo>.<key> goes to the optimizer config.
    void set(std::string_view key, std::string_view value);
    // key=value lines, '#' comments, optional [section] headers ignored.
    void apply_text(std::string_view text);
    void check() const;
    // Canonical text of every field that affects results.
    std::string canonical() const;
};

struct AlgorithmResult {
    std::string algorithm;
    std::vector<std::vector<double>> curves;  // per seed, best-so-far loss per trial
    std::vector<double> mean, lo, hi;
    std::vector<std::string> seed_errors;  // empty string when the seed completed
    std::vector<std::vector<EvalRecord>> records;
};

struct ExperimentReport {
    std::string problem;
    std::size_t budget = 0;
    std::vector<std::uint64_t> seeds;
    std::vector<AlgorithmResult> results;
    std::optional<double> train_best;  // mean over seeds' targets
    std::string spec_text;
    bool partial = false;
};

// mean and 1.96 s / sqrt(n) band per trial.
void aggregate(AlgorithmResult& r);

// Runs one algorithm for one seed against one target; returns the
// best-so-far curve and fills `records`.
std::vector<double> run_seed(const ExperimentSpec& spec, std::string_view algo, std::uint64_t seed, const Target& target,
                             EvalEngine& engine, std::span<const EvalRecord> dataset, std::vector<EvalRecord>& records);

// Progress callback: (algorithm, seed index, trials done).
using Progress = std::function<void(std::string_view, std::size_t, std::size_t)>;

ExperimentReport run_experiment(const ExperimentSpec& spec, const Progress& progress = {});

struct ReportFiles {
    std::string csv;
    std::string svg;
    std::string digest;  // FNV-1a over csv + per-seed records with t removed
};
ReportFiles render_report(const ExperimentReport& report);
// Writes report.csv, report.svg, report.json and records/<algo>_seed<k>.jsonl;
// returns the digest.
std::string emit_report(const ExperimentReport& report, const std::filesystem::path& dir);
// Rebuilds a report from an emitted directory (curves recomputed from the
// per-seed records).
ExperimentReport load_report(const std::filesystem::path& dir);

}  // namespace idkit
