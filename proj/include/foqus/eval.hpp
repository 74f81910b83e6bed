#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "foqus/config.hpp"
#include "foqus/dataset.hpp"
#include "foqus/dynamics.hpp"
#include "foqus/nn.hpp"
#include "foqus/scoring.hpp"
#include "foqus/selection.hpp"

namespace foqus {

struct EvalResult {
    double accuracy = 0.0;
    std::vector<double> per_class;  // accuracy on each class's test frames
};

/// Fresh model (seeded), trained on the coreset frames only for cfg.epochs,
/// scored by top-1 accuracy on the whole test split.
EvalResult train_and_eval(const Dataset& d, std::span<const std::int64_t> coreset_ids, const ModelSpec& spec,
                          TrainConfig cfg, std::uint64_t seed);

/// Seed of the coreset draw for one grid cell.
std::uint64_t selection_seed(std::uint64_t base, Method m, double rate, int repeat);
/// Seed of the retraining run; shared by all methods at a (rate, repeat) so
/// methods are compared on identical initializations and batch orders.
std::uint64_t retrain_seed(std::uint64_t base, double rate, int repeat);
/// Seed of the trajectory-recording run.
std::uint64_t record_seed(std::uint64_t base);

struct CellResult {
    std::string method;  // method name, or the score-term label in an ablation
    double rate = 0.0;
    int repeat = 0;
    std::uint64_t seed = 0;  // selection seed
    std::uint64_t coreset_digest = 0;
    int coreset_size = 0;
    EvalResult eval;
};

struct SummaryRow {
    std::string method;
    double rate = 0.0;
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for a single value
    int n = 0;
};

struct ResultTable {
    std::vector<CellResult> cells;  // grid order: method, rate, repeat
    std::vector<std::string> class_names;

    /// One row per (method, rate) in grid order.
    std::vector<SummaryRow> summary() const;
};

/// Everything one run produces; scores and trajectories are shared by the grid.
struct ExperimentRun {
    ExperimentConfig config;
    std::uint64_t dataset_digest = 0;
    TrajectoryStore store;
    ScoreTable scores;
    ResultTable results;
};

struct RunHooks {
    std::function<void(const std::string&)> log;
};

/// Loads or generates the dataset once, records trajectories once with
/// select_model, scores once, then for every (method, rate, repeat) selects a
/// coreset and retrains eval_model on it. A failing cell aborts the run with
/// the cell named in the message.
ExperimentRun run_experiment(const ExperimentConfig& cfg, const RunHooks& hooks = {});
/// Same pipeline with select_model != eval_model.
ExperimentRun cross_arch_experiment(const ExperimentConfig& cfg, const RunHooks& hooks = {});

/// The dataset and shared pipeline stages of run_experiment, without the grid.
Dataset load_or_generate(const ExperimentConfig& cfg);
ExperimentRun prepare_run(const ExperimentConfig& cfg, const Dataset& d, const RunHooks& hooks = {});
void run_grid(ExperimentRun& run, const Dataset& d, const RunHooks& hooks = {});

struct AblationRow {
    ScoreTerms terms;
    std::vector<CellResult> cells;  // one per repeat
    std::vector<Coreset> coresets;
};

/// For each of the 7 score-term subsets: rescore with the excluded terms set
/// to zero, draw FoQuS coresets at `rate` with the seeds the main grid uses for
/// foqus, retrain and evaluate.
std::vector<AblationRow> run_ablation(const ExperimentRun& run, const Dataset& d, double rate,
                                      const RunHooks& hooks = {});

/// method,rate,seed,accuracy / method,rate,mean,std,n / per-class sections.
std::string results_csv(const ResultTable& t);
std::string ablation_csv(const std::vector<AblationRow>& rows, double rate);
/// JSON: config, digests, per-cell seeds and coreset digests, build info.
std::string run_manifest(const ExperimentRun& run);

/// Parses the summary section of a results CSV.
std::vector<SummaryRow> parse_summary_csv(const std::vector<std::string>& lines, const std::string& where);
/// Plain-text comparison table with FoQuS-minus-uniform deltas and
/// published reference points.
std::string format_report(const std::vector<SummaryRow>& rows);

}  // namespace foqus
