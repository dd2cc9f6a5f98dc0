#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mergelab/checkpoint.hpp"
#include "mergelab/cka.hpp"
#include "mergelab/config.hpp"
#include "mergelab/merge.hpp"
#include "mergelab/svg.hpp"

namespace mergelab::harness {

// uniform forward interface over plain and merged models
using ForwardFn = std::function<nn::TensorRef(nn::Tape&, std::span<const int>,
                                              model::ActivationTrace*,
                                              std::span<const uint8_t>)>;

ForwardFn forward_fn(const model::ModelRef& m);
ForwardFn forward_fn(const merge::MergedRef& m);

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

struct MetricsRow {
    std::string study;
    std::string method;
    int step = -1;
    std::optional<double> alpha;
    std::optional<int> k;
    std::optional<double> ce_loss;
    std::optional<double> cka_adapt;
    std::optional<double> cka_pretrain;
    std::optional<double> divergence;
    double seconds = 0.0;
    uint64_t seed = 0;

    std::string to_csv_line() const;
};

// Appends one row at a time and flushes after each, so an interrupted study
// still leaves a parseable file.
class MetricsCsv {
public:
    explicit MetricsCsv(const std::filesystem::path& path, bool truncate = true);
    void write(const MetricsRow& row);
    static std::string header();
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

// ---------------------------------------------------------------------------
// training and evaluation
// ---------------------------------------------------------------------------

struct TrainOptions {
    int steps = 0;
    int batch_size = 8;
    int eval_interval = 100;
    int eval_batches = 8;
    uint64_t seed = 0;
    nn::AdamConfig adam;
    std::vector<int> snapshot_steps;  // clone the model at these steps (0 = init)
};

struct TrainOutput {
    std::vector<merge::TrainPoint> curve;
    std::vector<model::ModelRef> snapshots;
};

// generic loop over the trainable subset; aborts with a diagnostic if the
// loss stops being finite
TrainOutput train_model(model::TransformerModel& m, const std::vector<nn::TensorRef>& trainable,
                        const data::Corpus& corpus, const TrainOptions& opt);

// mean CE over a fixed, seeded set of validation batches
double evaluate(const ForwardFn& fwd, const data::Corpus& corpus, int seq_len, int batch_size,
                int eval_batches, uint64_t seed);

// ---------------------------------------------------------------------------
// activation capture
// ---------------------------------------------------------------------------

// per-layer activation matrices on one fixed batch; rows subsampled (jointly
// seeded) down to row_cap so comparisons across models stay paired
std::vector<analysis::ActivationMatrix> capture_activations(
    const ForwardFn& fwd, const data::Batch& batch, const std::string& model_id,
    const std::string& dataset_id, int row_cap, uint64_t seed);

double mean_layer_cka(const std::vector<analysis::ActivationMatrix>& a,
                      const std::vector<analysis::ActivationMatrix>& b);

// ---------------------------------------------------------------------------
// experiment pipeline
// ---------------------------------------------------------------------------

struct ExperimentArtifacts {
    data::Tokenizer tokenizer;
    data::Corpus pretrain_corpus;
    data::Corpus corpus_a;
    data::Corpus corpus_b;
    data::Corpus adaptation_corpus;
    model::ModelRef base;
    std::vector<model::ModelRef> checkpoints_a;  // one per schedule entry
    std::vector<model::ModelRef> checkpoints_b;
};

model::ModelConfig resolved_model_config(const ExperimentConfig& cfg,
                                         const data::Tokenizer& tok, uint64_t seed);

// pretrains the base and fine-tunes both specialists along the checkpoint
// schedule; results are cached as checkpoints under out_dir/seed_<s>/
ExperimentArtifacts prepare_experiment(const ExperimentConfig& cfg, uint64_t seed,
                                       bool use_cache = true);

model::ModelRef pretrain(const ExperimentConfig& cfg, const data::Tokenizer& tok,
                         const data::Corpus& corpus, uint64_t seed);

std::vector<model::ModelRef> finetune(const model::TransformerModel& base,
                                      const data::Corpus& corpus, const ExperimentConfig& cfg,
                                      uint64_t seed);

merge::RouterTrainConfig router_train_config(const ExperimentConfig& cfg, uint64_t seed);

// ---------------------------------------------------------------------------
// studies
// ---------------------------------------------------------------------------

void study_divergence(const ExperimentConfig& cfg, const ExperimentArtifacts& art,
                      uint64_t seed, MetricsCsv& csv);
void study_routing_ladder(const ExperimentConfig& cfg, const ExperimentArtifacts& art,
                          uint64_t seed, MetricsCsv& csv);
void study_layer_similarity(const ExperimentConfig& cfg, const ExperimentArtifacts& art,
                            uint64_t seed, MetricsCsv& csv);

// runs one study ("divergence", "ladder" or "layers") across all config seeds
void run_study(const ExperimentConfig& cfg, const std::string& which);

// regenerates SVG charts from an existing metrics CSV
void plot_from_csv(const std::filesystem::path& csv_path,
                   const std::filesystem::path& out_dir);

}  // namespace mergelab::harness
