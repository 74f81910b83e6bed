// foqus command-line driver: gen-data, record, score, select, evaluate,
// experiment, ablate, report.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "foqus/config.hpp"
#include "foqus/dataset.hpp"
#include "foqus/digest.hpp"
#include "foqus/dynamics.hpp"
#include "foqus/eval.hpp"
#include "foqus/scoring.hpp"
#include "foqus/selection.hpp"
#include "foqus/textio.hpp"

namespace fs = std::filesystem;
using namespace foqus;

namespace {

bool quiet = false;

void note(const std::string& msg)
{
    if (!quiet)
        std::cerr << "foqus: " << msg << '\n';
}

RunHooks hooks() { return {[](const std::string& m) { note(m); }}; }

void write_text(const fs::path& path, const std::string& text, bool force)
{
    AtomicFile f(path, force);
    f.stream() << text;
    f.commit();
}

ExperimentConfig config_from(const std::string& path)
{
    return path.empty() ? parse_config("") : load_config(path);
}

void require_digest(std::uint64_t expected, std::uint64_t actual, const std::string& what)
{
    if (expected != actual)
        throw std::invalid_argument("digest mismatch: " + what + " (expected " + to_hex(expected) + ", got " +
                                    to_hex(actual) + ")");
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"FoQuS coreset selection toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    app.add_flag("-q,--quiet", quiet, "Suppress progress messages");

    std::string config_path, data_path, traj_path, scores_path, coreset_path, results_path, out_path, tiers_text,
        method_text = "foqus", manifest_path, checkpoint_path;
    std::optional<std::uint64_t> seed;
    std::optional<double> rate, beta;
    std::optional<int> epochs;
    std::optional<std::string> select_arch, eval_arch;
    bool force = false, snr_stratified = false, unbalanced = false;

    auto add_common = [&](CLI::App* c, bool needs_out) {
        c->add_flag("--force", force, "Overwrite existing output files");
        auto* o = c->add_option("--out", out_path, "Output file");
        if (needs_out)
            o->required();
    };

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic I/Q dataset");
    gen->add_option("--config", config_path, "Experiment config (its dataset section is used), or 'default'");
    gen->add_option("--seed", seed, "Dataset seed (overrides the config)");
    add_common(gen, true);

    auto* rec = app.add_subcommand("record", "Train on the full train split and record per-sample dynamics");
    rec->add_option("--data", data_path, "Dataset file")->required()->check(CLI::ExistingFile);
    rec->add_option("--config", config_path, "Experiment config (select_model and record sections), or 'default'");
    rec->add_option("--seed", seed, "Base seed (overrides the config)");
    rec->add_option("--epochs", epochs, "Recording epochs T (overrides the config)");
    rec->add_option("--arch", select_arch, "Model architecture: mlp or cnn1d (overrides the config)");
    rec->add_option("--checkpoint", checkpoint_path, "Also write the final model checkpoint here");
    add_common(rec, true);

    auto* sc = app.add_subcommand("score", "Compute FoQuS and auxiliary scores from trajectories");
    sc->add_option("--trajectory", traj_path, "Trajectory file")->required()->check(CLI::ExistingFile);
    sc->add_option("--beta", beta, "Loss weight in the quality score (default 0.1)");
    sc->add_option("--data", data_path, "Dataset file to verify the trajectories against")
        ->check(CLI::ExistingFile);
    add_common(sc, true);

    auto* sel = app.add_subcommand("select", "Select a coreset");
    sel->add_option("--scores", scores_path, "Score table")->required()->check(CLI::ExistingFile);
    sel->add_option("--trajectory", traj_path, "Trajectory file (needed by herding and kcenter)")
        ->check(CLI::ExistingFile);
    sel->add_option("--method", method_text, "Selection method (default foqus)");
    sel->add_option("--rate", rate, "Sampling rate in (0,1]")->required();
    sel->add_option("--tiers", tiers_text, "Tier proportions p1,p2,p3 (default equal)");
    sel->add_option("--seed", seed, "Selection seed (default 0)");
    sel->add_flag("--snr-stratified", snr_stratified, "Apportion each class budget across SNR bins");
    sel->add_flag("--no-class-balance", unbalanced, "Select from the whole pool instead of per class");
    add_common(sel, true);

    auto* ev = app.add_subcommand("evaluate", "Retrain on a coreset and report test accuracy");
    ev->add_option("--data", data_path, "Dataset file")->required()->check(CLI::ExistingFile);
    ev->add_option("--coreset", coreset_path, "Coreset file")->required()->check(CLI::ExistingFile);
    ev->add_option("--config", config_path, "Experiment config (eval_model and retrain sections), or 'default'");
    ev->add_option("--seed", seed, "Retraining seed (default 0)");
    ev->add_option("--epochs", epochs, "Retraining epochs (overrides the config)");
    ev->add_option("--arch", eval_arch, "Model architecture: mlp or cnn1d (overrides the config)");
    add_common(ev, false);

    auto* ex = app.add_subcommand("experiment", "Run a full methods x rates x repeats grid");
    ex->add_option("--config", config_path, "Experiment config file, or 'default'")->required();
    ex->add_option("--seed", seed, "Base seed (overrides the config)");
    ex->add_option("--data", data_path, "Use this dataset file instead of generating one")
        ->check(CLI::ExistingFile);
    ex->add_option("--select-arch", select_arch, "Architecture used for recording (overrides the config)");
    ex->add_option("--eval-arch", eval_arch, "Architecture used for retraining (overrides the config)");
    ex->add_option("--manifest", manifest_path, "Run manifest path (default: <out>.manifest.json)");
    add_common(ex, true);

    auto* ab = app.add_subcommand("ablate", "Evaluate the 7 score-term combinations");
    ab->add_option("--config", config_path, "Experiment config file, or 'default'")->required();
    ab->add_option("--seed", seed, "Base seed (overrides the config)");
    ab->add_option("--rate", rate, "Sampling rate (default: the config's ablation_rate)");
    ab->add_option("--data", data_path, "Use this dataset file instead of generating one")
        ->check(CLI::ExistingFile);
    add_common(ab, true);

    auto* rep = app.add_subcommand("report", "Summarize a results CSV");
    rep->add_option("--results", results_path, "Results CSV")->required()->check(CLI::ExistingFile);
    add_common(rep, false);

    CLI11_PARSE(app, argc, argv);

    try {
        auto apply_overrides = [&](ExperimentConfig& cfg) {
            if (seed)
                cfg.seed = *seed;
            if (!data_path.empty())
                cfg.dataset_path = data_path;
            if (select_arch)
                cfg.select_model.arch = parse_arch(*select_arch);
            if (eval_arch)
                cfg.eval_model.arch = parse_arch(*eval_arch);
            cfg.validate();
        };

        if (gen->parsed()) {
            ensure_can_write(out_path, force);
            auto cfg = config_from(config_path);
            if (seed)
                cfg.dataset.seed = *seed;
            const auto d = generate_dataset(cfg.dataset);
            save_dataset(out_path, d, force);
            note("wrote " + std::to_string(d.frames.size()) + " frames (" + std::to_string(d.count(Split::train)) +
                 " train) to " + out_path + ", digest " + to_hex(d.digest()));
        } else if (rec->parsed()) {
            ensure_can_write(out_path, force);
            if (!checkpoint_path.empty())
                ensure_can_write(checkpoint_path, force);
            auto cfg = config_from(config_path);
            if (epochs)
                cfg.record.epochs = *epochs;
            if (seed)
                cfg.seed = *seed;
            if (select_arch)
                cfg.select_model.arch = parse_arch(*select_arch);
            const auto d = load_dataset(data_path);
            bind_models(cfg, d);
            TrainConfig tc = cfg.record;
            tc.seed = record_seed(cfg.seed);
            RecordOptions opts;
            opts.on_epoch = [&](int e, double loss) {
                note("epoch " + std::to_string(e) + "/" + std::to_string(tc.epochs) + " loss " + format_real(loss));
            };
            Parameters final_params;
            opts.final_params = &final_params;
            const auto store = record_training(d, cfg.select_model, tc, opts);
            save_trajectories(out_path, store, force);
            if (!checkpoint_path.empty())
                save_checkpoint(checkpoint_path, cfg.select_model, final_params, tc.seed, force);
            note("wrote " + std::to_string(store.records.size()) + " trajectories to " + out_path);
        } else if (sc->parsed()) {
            ensure_can_write(out_path, force);
            const auto store = load_trajectories(traj_path);
            ScoreOptions opts;
            opts.beta = beta.value_or(kDefaultBeta);
            if (!data_path.empty())
                opts.dataset_digest = load_dataset(data_path).digest();
            const auto table = score_dataset(store, opts);
            save_scores(out_path, table, force);
            note("wrote " + std::to_string(table.rows.size()) + " score rows to " + out_path);
        } else if (sel->parsed()) {
            ensure_can_write(out_path, force);
            SelectionConfig cfg;
            cfg.method = parse_method(method_text);
            cfg.rate = *rate;
            if (!tiers_text.empty())
                cfg.tiers = parse_tiers(tiers_text);
            cfg.seed = seed.value_or(0);
            cfg.snr_stratified = snr_stratified;
            cfg.class_balanced = !unbalanced;
            cfg.validate();
            const auto scores = load_scores(scores_path);
            std::optional<TrajectoryStore> store;
            if (!traj_path.empty()) {
                store = load_trajectories(traj_path);
                require_digest(scores.meta.trajectory_digest, store->digest(),
                               "score table was not computed from " + traj_path);
            } else if (needs_embeddings(cfg.method)) {
                throw std::invalid_argument(std::string(method_name(cfg.method)) + " needs --trajectory");
            }
            const auto c = select_coreset(scores, store ? &*store : nullptr, cfg);
            save_coreset(out_path, c, force);
            note("selected " + std::to_string(c.ids.size()) + " of " + std::to_string(scores.rows.size()) +
                 " samples into " + out_path);
        } else if (ev->parsed()) {
            if (!out_path.empty())
                ensure_can_write(out_path, force);
            auto cfg = config_from(config_path);
            if (epochs)
                cfg.retrain.epochs = *epochs;
            if (eval_arch)
                cfg.eval_model.arch = parse_arch(*eval_arch);
            const auto d = load_dataset(data_path);
            const auto c = load_coreset(coreset_path);
            require_digest(c.manifest.dataset_digest, d.digest(), "coreset was not selected from " + data_path);
            bind_models(cfg, d);
            const auto r = train_and_eval(d, c.ids, cfg.eval_model, cfg.retrain, seed.value_or(0));
            const auto line = format_real(r.accuracy) + "\n";
            std::cout << line;
            if (!out_path.empty())
                write_text(out_path, line, force);
        } else if (ex->parsed()) {
            if (manifest_path.empty())
                manifest_path = out_path + ".manifest.json";
            ensure_can_write(out_path, force);
            ensure_can_write(manifest_path, force);
            auto cfg = load_config(config_path);
            apply_overrides(cfg);
            const auto run = run_experiment(cfg, hooks());
            // Both files are staged before either is committed.
            AtomicFile csv(out_path, force), manifest(manifest_path, force);
            csv.stream() << results_csv(run.results);
            manifest.stream() << run_manifest(run);
            csv.commit();
            manifest.commit();
            note("wrote " + std::to_string(run.results.cells.size()) + " cells to " + out_path);
        } else if (ab->parsed()) {
            ensure_can_write(out_path, force);
            auto cfg = load_config(config_path);
            apply_overrides(cfg);
            const double r = rate.value_or(cfg.ablation_rate);
            const auto d = load_or_generate(cfg);
            const auto run = prepare_run(cfg, d, hooks());
            const auto rows = run_ablation(run, d, r, hooks());
            write_text(out_path, ablation_csv(rows, r), force);
            note("wrote " + std::to_string(rows.size()) + " combinations to " + out_path);
        } else if (rep->parsed()) {
            if (!out_path.empty())
                ensure_can_write(out_path, force);
            const auto text = format_report(parse_summary_csv(read_lines(results_path), results_path));
            std::cout << text;
            if (!out_path.empty())
                write_text(out_path, text, force);
        }
    } catch (const std::exception& e) {
        std::cerr << "foqus: error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
