// command-line front end: pretrain / finetune / merge-train / eval / cka /
// study {divergence,ladder,layers} / plot
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "mergelab/harness.hpp"

using namespace mergelab;

namespace {

harness::ExperimentConfig load_or_default(const std::string& config_path) {
    if (config_path.empty()) {
        return harness::default_config();
    }
    return harness::load_config(config_path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"model-merging laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    uint64_t seed = 1;
    app.add_option("--config", config_path, "JSON experiment config (omit for defaults)");
    app.add_option("--seed", seed, "experiment seed");

    auto* cmd_pretrain = app.add_subcommand("pretrain", "pretrain the shared base model");
    auto* cmd_finetune =
        app.add_subcommand("finetune", "fine-tune both specialists from the cached base");
    auto* cmd_merge = app.add_subcommand("merge-train", "build a merge and train its router");
    std::string merge_method = "full_router";
    double merge_alpha = 0.5;
    int merge_k = 2;
    bool merge_mlp2 = false;
    cmd_merge->add_option("--method", merge_method,
                          "lerp|slerp|activation_interp|single_router|full_router|"
                          "full_router_base|multi_layer");
    cmd_merge->add_option("--alpha", merge_alpha, "interpolation weight for static methods");
    cmd_merge->add_option("--k", merge_k, "window size for multi_layer");
    cmd_merge->add_flag("--mlp2", merge_mlp2, "use a 2-layer MLP router");

    auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
    std::string eval_ckpt;
    std::string eval_corpus = "adaptation";
    cmd_eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
    cmd_eval->add_option("--corpus", eval_corpus, "pretrain|specialist_a|specialist_b|adaptation");

    auto* cmd_cka = app.add_subcommand("cka", "mean layer CKA between two checkpoints");
    std::string cka_lhs, cka_rhs;
    std::string cka_corpus = "adaptation";
    cmd_cka->add_option("--lhs", cka_lhs, "first checkpoint")->required();
    cmd_cka->add_option("--rhs", cka_rhs, "second checkpoint")->required();
    cmd_cka->add_option("--corpus", cka_corpus, "dataset for activation capture");

    auto* cmd_study = app.add_subcommand("study", "run a full study across config seeds");
    std::string study_name;
    cmd_study->add_option("name", study_name, "divergence|ladder|layers")->required();

    auto* cmd_plot = app.add_subcommand("plot", "regenerate charts from a metrics CSV");
    std::string plot_csv;
    cmd_plot->add_option("--csv", plot_csv, "metrics CSV path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const harness::ExperimentConfig cfg = load_or_default(config_path);

        auto pick_corpus = [](const harness::ExperimentArtifacts& art,
                              const std::string& name) -> const data::Corpus& {
            if (name == "pretrain") return art.pretrain_corpus;
            if (name == "specialist_a") return art.corpus_a;
            if (name == "specialist_b") return art.corpus_b;
            if (name == "adaptation") return art.adaptation_corpus;
            throw harness::ConfigError("unknown corpus: " + name);
        };

        if (*cmd_pretrain || *cmd_finetune) {
            // prepare_experiment covers both stages and caches to disk
            auto art = harness::prepare_experiment(cfg, seed);
            std::cout << "base + " << art.checkpoints_a.size() << "+"
                      << art.checkpoints_b.size() << " specialist checkpoints under "
                      << cfg.out_dir << "/seed_" << seed << "\n";
            return 0;
        }
        if (*cmd_merge) {
            auto art = harness::prepare_experiment(cfg, seed);
            merge::MergeSpec spec;
            spec.method = merge::merge_method_from_name(merge_method);
            spec.alpha = merge_alpha;
            spec.k = merge_k;
            spec.mlp2_router = merge_mlp2;
            spec.validate();
            auto merged = merge::build_merged(
                spec, {art.checkpoints_a.back(), art.checkpoints_b.back()}, art.base);
            if (merge::is_static_method(spec.method)) {
                const double ce = harness::evaluate(
                    harness::forward_fn(merged), art.adaptation_corpus,
                    cfg.model.context_length, cfg.optim.batch_size, cfg.optim.eval_batches,
                    seed);
                std::cout << spec.label() << " adaptation CE " << ce << "\n";
            } else {
                auto curve = merge::train_router(*merged, art.adaptation_corpus,
                                                 harness::router_train_config(cfg, seed));
                for (const auto& p : curve) {
                    std::cout << "step " << p.step << " val CE " << p.val_ce << "\n";
                }
            }
            return 0;
        }
        if (*cmd_eval) {
            auto art = harness::prepare_experiment(cfg, seed);
            auto ck = harness::load_checkpoint(eval_ckpt);
            const double ce = harness::evaluate(
                harness::forward_fn(ck.model), pick_corpus(art, eval_corpus),
                cfg.model.context_length, cfg.optim.batch_size, cfg.optim.eval_batches, seed);
            std::cout << eval_ckpt << " (" << ck.phase << ") " << eval_corpus << " CE " << ce
                      << "\n";
            return 0;
        }
        if (*cmd_cka) {
            auto art = harness::prepare_experiment(cfg, seed);
            auto lhs = harness::load_checkpoint(cka_lhs);
            auto rhs = harness::load_checkpoint(cka_rhs);
            const auto& corpus = pick_corpus(art, cka_corpus);
            data::BatchStream stream(corpus, cfg.optim.batch_size, cfg.model.context_length,
                                     seed, /*validation=*/true);
            const data::Batch batch = stream.next();
            auto ta = harness::capture_activations(harness::forward_fn(lhs.model), batch, "lhs",
                                                   cka_corpus, cfg.cka_row_cap, seed);
            auto tb = harness::capture_activations(harness::forward_fn(rhs.model), batch, "rhs",
                                                   cka_corpus, cfg.cka_row_cap, seed);
            std::cout << "mean layer CKA " << harness::mean_layer_cka(ta, tb) << "\n";
            return 0;
        }
        if (*cmd_study) {
            harness::run_study(cfg, study_name);
            std::cout << "wrote " << cfg.out_dir << "/" << study_name << "_metrics.csv\n";
            return 0;
        }
        if (*cmd_plot) {
            harness::plot_from_csv(plot_csv, cfg.out_dir);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
