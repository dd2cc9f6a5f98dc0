#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mergelab/config.hpp"

using namespace mergelab;
using namespace mergelab::harness;

namespace {

struct TempFile {
    std::filesystem::path path;
    explicit TempFile(const std::string& content) {
        path = std::filesystem::temp_directory_path() / "mergelab_config_test.json";
        std::ofstream(path) << content;
    }
    ~TempFile() { std::filesystem::remove(path); }
};

}  // namespace

TEST_CASE("default config validates") {
    auto cfg = default_config();
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.seeds.size() == 3);
    CHECK(cfg.checkpoint_schedule.front() == 0);
}

TEST_CASE("json config: values land where they should") {
    TempFile f(R"({
        "model": {"n_layers": 3, "d_model": 24, "n_heads": 3, "context_length": 32, "seed": 5},
        "optim": {"lr": 0.001, "pretrain_steps": 50, "finetune_steps": 20, "router_steps": 10},
        "data": {"specialist_a": {"kind": "math", "size_chars": 5000, "seed": 2}},
        "checkpoint_schedule": [0, 5, 20],
        "seeds": [4, 9],
        "out_dir": "elsewhere",
        "alpha_grid": [0.0, 0.5, 1.0]
    })");
    auto cfg = load_config(f.path);
    CHECK(cfg.model.n_layers == 3);
    CHECK(cfg.model.d_model == 24);
    CHECK(cfg.model.d_mlp == 96);  // defaults to 4x d_model
    CHECK(cfg.optim.lr == 0.001);
    CHECK(cfg.optim.pretrain_steps == 50);
    CHECK(cfg.data.specialist_a.kind == data::TaskKind::Math);
    CHECK(cfg.data.specialist_a.size_chars == 5000);
    CHECK(cfg.checkpoint_schedule == std::vector<int>{0, 5, 20});
    CHECK(cfg.seeds == std::vector<uint64_t>{4, 9});
    CHECK(cfg.out_dir == "elsewhere");
    CHECK(cfg.alpha_grid == std::vector<double>{0.0, 0.5, 1.0});
}

TEST_CASE("unknown keys are rejected at every level") {
    TempFile top(R"({"bogus": 1})");
    CHECK_THROWS_AS(load_config(top.path), ConfigError);
    TempFile nested(R"({"model": {"d_modle": 16}})");
    CHECK_THROWS_AS(load_config(nested.path), ConfigError);
    TempFile optim(R"({"optim": {"learning_rate": 0.1}})");
    CHECK_THROWS_AS(load_config(optim.path), ConfigError);
}

TEST_CASE("schedule validation: ordering and bounds") {
    auto cfg = default_config();
    cfg.checkpoint_schedule = {0, 10, 10};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.checkpoint_schedule = {0, cfg.optim.finetune_steps + 1};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.checkpoint_schedule = {};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.checkpoint_schedule = {0, cfg.optim.finetune_steps};
    CHECK_NOTHROW(cfg.validate());
    cfg.seeds = {};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("missing config file raises") {
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("bad merge method in config raises") {
    TempFile f(R"({"merges": [{"method": "teleport"}]})");
    CHECK_THROWS(load_config(f.path));
}
