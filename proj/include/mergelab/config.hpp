#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mergelab/adam.hpp"
#include "mergelab/data.hpp"
#include "mergelab/merge.hpp"
#include "mergelab/model.hpp"

namespace mergelab::harness {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OptimConfig {
    double lr = 8e-4;
    double finetune_lr = 8e-5;
    double router_lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    int batch_size = 16;
    int pretrain_steps = 2000;
    int finetune_steps = 800;
    int router_steps = 200;
    int eval_interval = 100;
    int eval_batches = 8;

    nn::AdamConfig adam(double learning_rate) const {
        return {learning_rate, beta1, beta2, eps, weight_decay};
    }
};

struct DataConfig {
    data::SyntheticTaskSpec pretrain;
    data::SyntheticTaskSpec specialist_a;
    data::SyntheticTaskSpec specialist_b;
    data::SyntheticTaskSpec adaptation;

    std::vector<data::SyntheticTaskSpec> all() const {
        return {pretrain, specialist_a, specialist_b, adaptation};
    }
};

struct ExperimentConfig {
    model::ModelConfig model;  // vocab_size filled from the tokenizer
    OptimConfig optim;
    DataConfig data;
    std::vector<int> checkpoint_schedule;  // strictly increasing, within [0, finetune_steps]
    std::vector<merge::MergeSpec> merges;
    std::vector<uint64_t> seeds;
    std::string out_dir = "out";
    int cka_row_cap = 2048;
    std::vector<double> alpha_grid = {0.0, 0.25, 0.5, 0.75, 1.0};

    void validate() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig default_config();

}  // namespace mergelab::harness
