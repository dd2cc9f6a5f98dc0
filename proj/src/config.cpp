#include "mergelab/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace mergelab::harness {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::set<std::string>& known,
                         const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        if (!known.contains(key)) {
            throw ConfigError("unknown config key '" + key + "' in " + where);
        }
    }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        out = obj.at(key).get<T>();
    }
}

model::ModelConfig parse_model(const json& obj) {
    reject_unknown_keys(obj, {"n_layers", "n_heads", "d_model", "d_mlp", "vocab_size",
                              "context_length", "seed", "train_layernorm"},
                        "model");
    model::ModelConfig m;
    read_field(obj, "n_layers", m.n_layers);
    read_field(obj, "n_heads", m.n_heads);
    read_field(obj, "d_model", m.d_model);
    m.d_mlp = 4 * m.d_model;
    read_field(obj, "d_mlp", m.d_mlp);
    read_field(obj, "vocab_size", m.vocab_size);
    read_field(obj, "context_length", m.context_length);
    read_field(obj, "seed", m.seed);
    read_field(obj, "train_layernorm", m.train_layernorm);
    return m;
}

OptimConfig parse_optim(const json& obj) {
    reject_unknown_keys(obj,
                        {"lr", "finetune_lr", "router_lr", "beta1", "beta2", "eps",
                         "weight_decay", "batch_size", "pretrain_steps", "finetune_steps",
                         "router_steps", "eval_interval", "eval_batches"},
                        "optim");
    OptimConfig o;
    read_field(obj, "lr", o.lr);
    read_field(obj, "finetune_lr", o.finetune_lr);
    read_field(obj, "router_lr", o.router_lr);
    read_field(obj, "beta1", o.beta1);
    read_field(obj, "beta2", o.beta2);
    read_field(obj, "eps", o.eps);
    read_field(obj, "weight_decay", o.weight_decay);
    read_field(obj, "batch_size", o.batch_size);
    read_field(obj, "pretrain_steps", o.pretrain_steps);
    read_field(obj, "finetune_steps", o.finetune_steps);
    read_field(obj, "router_steps", o.router_steps);
    read_field(obj, "eval_interval", o.eval_interval);
    read_field(obj, "eval_batches", o.eval_batches);
    return o;
}

data::SyntheticTaskSpec parse_task(const json& obj, const std::string& where) {
    reject_unknown_keys(obj, {"kind", "size_chars", "operand_max", "program_len", "seed",
                              "datamix_ratio"},
                        where);
    data::SyntheticTaskSpec s;
    if (obj.contains("kind")) {
        s.kind = data::task_kind_from_name(obj.at("kind").get<std::string>());
    }
    read_field(obj, "size_chars", s.size_chars);
    read_field(obj, "operand_max", s.operand_max);
    read_field(obj, "program_len", s.program_len);
    read_field(obj, "seed", s.seed);
    read_field(obj, "datamix_ratio", s.datamix_ratio);
    return s;
}

merge::MergeSpec parse_merge(const json& obj) {
    reject_unknown_keys(obj, {"method", "alpha", "k", "mlp2_router"}, "merges[]");
    merge::MergeSpec m;
    if (obj.contains("method")) {
        m.method = merge::merge_method_from_name(obj.at("method").get<std::string>());
    }
    read_field(obj, "alpha", m.alpha);
    read_field(obj, "k", m.k);
    read_field(obj, "mlp2_router", m.mlp2_router);
    m.validate();
    return m;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (checkpoint_schedule.empty()) {
        throw ConfigError("checkpoint_schedule must not be empty");
    }
    int prev = -1;
    for (int s : checkpoint_schedule) {
        if (s <= prev) {
            throw ConfigError("checkpoint_schedule must be strictly increasing");
        }
        if (s < 0 || s > optim.finetune_steps) {
            throw ConfigError("checkpoint_schedule entries must lie in [0, finetune_steps]");
        }
        prev = s;
    }
    if (seeds.empty()) {
        throw ConfigError("seeds must not be empty");
    }
    for (const auto& m : merges) {
        m.validate();
    }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    json root = json::parse(in);
    reject_unknown_keys(root,
                        {"model", "optim", "data", "checkpoint_schedule", "merges", "seeds",
                         "out_dir", "cka_row_cap", "alpha_grid"},
                        "top level");
    ExperimentConfig cfg = default_config();
    if (root.contains("model")) {
        cfg.model = parse_model(root.at("model"));
    }
    if (root.contains("optim")) {
        cfg.optim = parse_optim(root.at("optim"));
    }
    if (root.contains("data")) {
        const json& d = root.at("data");
        reject_unknown_keys(d, {"pretrain", "specialist_a", "specialist_b", "adaptation"},
                            "data");
        if (d.contains("pretrain")) {
            cfg.data.pretrain = parse_task(d.at("pretrain"), "data.pretrain");
        }
        if (d.contains("specialist_a")) {
            cfg.data.specialist_a = parse_task(d.at("specialist_a"), "data.specialist_a");
        }
        if (d.contains("specialist_b")) {
            cfg.data.specialist_b = parse_task(d.at("specialist_b"), "data.specialist_b");
        }
        if (d.contains("adaptation")) {
            cfg.data.adaptation = parse_task(d.at("adaptation"), "data.adaptation");
        }
    }
    if (root.contains("checkpoint_schedule")) {
        cfg.checkpoint_schedule = root.at("checkpoint_schedule").get<std::vector<int>>();
    }
    if (root.contains("merges")) {
        cfg.merges.clear();
        for (const auto& m : root.at("merges")) {
            cfg.merges.push_back(parse_merge(m));
        }
    }
    if (root.contains("seeds")) {
        cfg.seeds = root.at("seeds").get<std::vector<uint64_t>>();
    }
    read_field(root, "out_dir", cfg.out_dir);
    read_field(root, "cka_row_cap", cfg.cka_row_cap);
    if (root.contains("alpha_grid")) {
        cfg.alpha_grid = root.at("alpha_grid").get<std::vector<double>>();
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig default_config() {
    ExperimentConfig cfg;
    cfg.model = {};
    cfg.model.n_layers = 4;
    cfg.model.n_heads = 4;
    cfg.model.d_model = 128;
    cfg.model.d_mlp = 512;
    cfg.model.context_length = 128;

    cfg.optim.pretrain_steps = 20000;
    cfg.optim.finetune_steps = 5000;
    cfg.optim.router_steps = 1000;
    cfg.optim.batch_size = 16;

    cfg.data.pretrain = {data::TaskKind::PretrainMix, 400000, 20, 6, 11, 0.0};
    cfg.data.specialist_a = {data::TaskKind::Math, 200000, 20, 6, 12, 0.0};
    cfg.data.specialist_b = {data::TaskKind::Code, 200000, 20, 6, 13, 0.0};
    cfg.data.adaptation = {data::TaskKind::CrossDomain, 200000, 20, 6, 14, 0.0};

    cfg.checkpoint_schedule = {0, 100, 300, 700, 1500, 2500, 3500, 5000};
    cfg.merges = {
        {merge::MergeMethod::ActivationInterp, 0.5, 1, false},
        {merge::MergeMethod::FullRouter, 0.5, 1, false},
    };
    cfg.seeds = {1, 2, 3};
    return cfg;
}

}  // namespace mergelab::harness
