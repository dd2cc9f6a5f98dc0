#include "mergelab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

namespace mergelab::harness {

using namespace mergelab::nn;
using model::ActivationTrace;
using model::ModelRef;
using model::TransformerModel;

namespace {

uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double now_seconds() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::string opt_str(const std::optional<double>& v) {
    if (!v) {
        return "";
    }
    std::ostringstream os;
    os.precision(12);
    os << *v;
    return os.str();
}

}  // namespace

ForwardFn forward_fn(const ModelRef& m) {
    return [m](Tape& tape, std::span<const int> tokens, ActivationTrace* trace,
               std::span<const uint8_t> mask) {
        return m->forward(tape, tokens, trace, mask);
    };
}

ForwardFn forward_fn(const merge::MergedRef& m) {
    return [m](Tape& tape, std::span<const int> tokens, ActivationTrace* trace,
               std::span<const uint8_t> mask) {
        return m->forward(tape, tokens, trace, mask);
    };
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

std::string MetricsRow::to_csv_line() const {
    std::ostringstream os;
    os << study << "," << method << "," << step << "," << opt_str(alpha) << ","
       << (k ? std::to_string(*k) : "") << "," << opt_str(ce_loss) << ","
       << opt_str(cka_adapt) << "," << opt_str(cka_pretrain) << "," << opt_str(divergence)
       << "," << seconds << "," << seed;
    return os.str();
}

std::string MetricsCsv::header() {
    return "study,method,step,alpha,k,ce_loss,cka_adapt,cka_pretrain,divergence,seconds,seed";
}

MetricsCsv::MetricsCsv(const std::filesystem::path& path, bool truncate) : path_(path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    const bool exists = std::filesystem::exists(path);
    out_.open(path, truncate ? std::ios::trunc : std::ios::app);
    if (!out_) {
        throw std::runtime_error("cannot open metrics csv " + path.string());
    }
    if (truncate || !exists) {
        out_ << header() << "\n";
        out_.flush();
    }
}

void MetricsCsv::write(const MetricsRow& row) {
    out_ << row.to_csv_line() << "\n";
    out_.flush();
}

// ---------------------------------------------------------------------------
// training / evaluation
// ---------------------------------------------------------------------------

TrainOutput train_model(TransformerModel& m, const std::vector<TensorRef>& trainable,
                        const data::Corpus& corpus, const TrainOptions& opt) {
    TrainOutput out;
    Adam optimizer(trainable, opt.adam);
    data::BatchStream stream(corpus, opt.batch_size, m.config().context_length, opt.seed,
                             /*validation=*/false);
    const ForwardFn fwd = [&m](Tape& tape, std::span<const int> tokens, ActivationTrace* trace,
                               std::span<const uint8_t> mask) {
        return m.forward(tape, tokens, trace, mask);
    };
    auto maybe_snapshot = [&](int step) {
        if (std::find(opt.snapshot_steps.begin(), opt.snapshot_steps.end(), step) !=
            opt.snapshot_steps.end()) {
            out.snapshots.push_back(m.clone());
        }
    };
    auto eval_now = [&] {
        return evaluate(fwd, corpus, m.config().context_length, opt.batch_size,
                        opt.eval_batches, opt.seed);
    };
    maybe_snapshot(0);
    out.curve.push_back({0, eval_now()});
    for (int step = 1; step <= opt.steps; ++step) {
        const data::Batch batch = stream.next();
        Tape tape;
        std::vector<TensorRef> losses;
        for (int b = 0; b < batch.batch_size; ++b) {
            auto logits = fwd(tape, batch.sequence(b), nullptr, {});
            losses.push_back(cross_entropy(tape, logits, batch.sequence_targets(b)));
        }
        auto loss = mean_of(tape, losses);
        if (!std::isfinite(loss->data[0])) {
            throw ContractError("training diverged (non-finite loss) at step " +
                                std::to_string(step));
        }
        optimizer.zero_grad();
        backward(loss, tape);
        optimizer.step();
        maybe_snapshot(step);
        if (step % opt.eval_interval == 0 || step == opt.steps) {
            out.curve.push_back({step, eval_now()});
        }
    }
    return out;
}

double evaluate(const ForwardFn& fwd, const data::Corpus& corpus, int seq_len, int batch_size,
                int eval_batches, uint64_t seed) {
    data::BatchStream stream(corpus, batch_size, seq_len, seed, /*validation=*/true);
    Tape tape;
    tape.set_recording(false);
    double total = 0.0;
    int count = 0;
    for (int i = 0; i < eval_batches; ++i) {
        const data::Batch batch = stream.next();
        for (int b = 0; b < batch.batch_size; ++b) {
            auto logits = fwd(tape, batch.sequence(b), nullptr, {});
            auto loss = cross_entropy(tape, logits, batch.sequence_targets(b));
            total += loss->data[0];
            ++count;
        }
    }
    return total / count;
}

// ---------------------------------------------------------------------------
// activation capture
// ---------------------------------------------------------------------------

std::vector<analysis::ActivationMatrix> capture_activations(
    const ForwardFn& fwd, const data::Batch& batch, const std::string& model_id,
    const std::string& dataset_id, int row_cap, uint64_t seed) {
    Tape tape;
    tape.set_recording(false);
    ActivationTrace trace;
    for (int b = 0; b < batch.batch_size; ++b) {
        fwd(tape, batch.sequence(b), &trace, batch.sequence_mask(b));
    }
    const int n_layers = static_cast<int>(trace.layer_rows.size());
    const int d = trace.d_model;
    const int rows = trace.rows;
    // joint subsample: same seed + same batch => same row indices for every model
    std::vector<int> keep(rows);
    for (int i = 0; i < rows; ++i) {
        keep[i] = i;
    }
    if (rows > row_cap) {
        Rng rng(mix_seed(seed, 0x726f7773ULL));
        for (int i = 0; i < row_cap; ++i) {
            const int j = i + static_cast<int>(rng.next_below(static_cast<uint64_t>(rows - i)));
            std::swap(keep[i], keep[j]);
        }
        keep.resize(row_cap);
        std::sort(keep.begin(), keep.end());
    }
    std::vector<analysis::ActivationMatrix> out;
    out.reserve(n_layers);
    for (int l = 0; l < n_layers; ++l) {
        analysis::ActivationMatrix m;
        m.n = static_cast<int>(keep.size());
        m.d = d;
        m.tag = {model_id, l, dataset_id};
        m.x.reserve(static_cast<size_t>(m.n) * d);
        for (int idx : keep) {
            const double* row = trace.layer_rows[l].data() + static_cast<size_t>(idx) * d;
            m.x.insert(m.x.end(), row, row + d);
        }
        out.push_back(std::move(m));
    }
    return out;
}

double mean_layer_cka(const std::vector<analysis::ActivationMatrix>& a,
                      const std::vector<analysis::ActivationMatrix>& b) {
    if (a.size() != b.size() || a.empty()) {
        throw ContractError("mean_layer_cka: trace layer counts differ");
    }
    double total = 0.0;
    for (size_t l = 0; l < a.size(); ++l) {
        total += analysis::cka(a[l], b[l]).value;
    }
    return total / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

model::ModelConfig resolved_model_config(const ExperimentConfig& cfg,
                                         const data::Tokenizer& tok, uint64_t seed) {
    model::ModelConfig m = cfg.model;
    m.vocab_size = tok.vocab_size();
    m.seed = mix_seed(cfg.model.seed, seed);
    return m;
}

ModelRef pretrain(const ExperimentConfig& cfg, const data::Tokenizer& tok,
                  const data::Corpus& corpus, uint64_t seed) {
    auto m = std::make_shared<TransformerModel>(resolved_model_config(cfg, tok, seed));
    m->set_requires_grad(model::ParamPolicy::All);
    std::vector<TensorRef> trainable;
    for (const auto& [name, t] : m->named_params()) {
        trainable.push_back(t);
    }
    TrainOptions opt;
    opt.steps = cfg.optim.pretrain_steps;
    opt.batch_size = cfg.optim.batch_size;
    opt.eval_interval = cfg.optim.eval_interval;
    opt.eval_batches = cfg.optim.eval_batches;
    opt.seed = mix_seed(seed, 0x707265ULL);
    opt.adam = cfg.optim.adam(cfg.optim.lr);
    train_model(*m, trainable, corpus, opt);
    return m;
}

std::vector<ModelRef> finetune(const TransformerModel& base, const data::Corpus& corpus,
                               const ExperimentConfig& cfg, uint64_t seed) {
    auto m = base.clone();
    m->set_requires_grad(model::ParamPolicy::MlpOnly);
    const uint64_t trunk_before = m->trunk_hash();
    TrainOptions opt;
    opt.steps = cfg.optim.finetune_steps;
    opt.batch_size = cfg.optim.batch_size;
    opt.eval_interval = cfg.optim.eval_interval;
    opt.eval_batches = cfg.optim.eval_batches;
    opt.seed = seed;
    opt.adam = cfg.optim.adam(cfg.optim.finetune_lr);
    opt.snapshot_steps = cfg.checkpoint_schedule;
    TrainOutput out = train_model(*m, m->mlp_params(), corpus, opt);
    if (m->trunk_hash() != trunk_before) {
        throw ContractError("finetune: frozen trunk changed");
    }
    return out.snapshots;
}

merge::RouterTrainConfig router_train_config(const ExperimentConfig& cfg, uint64_t seed) {
    merge::RouterTrainConfig rtc;
    rtc.steps = cfg.optim.router_steps;
    rtc.batch_size = cfg.optim.batch_size;
    rtc.eval_interval = std::max(1, cfg.optim.router_steps / 4);
    rtc.eval_batches = cfg.optim.eval_batches;
    rtc.seed = mix_seed(seed, 0x726f7574ULL);
    rtc.adam = cfg.optim.adam(cfg.optim.router_lr);
    return rtc;
}

namespace {

std::filesystem::path seed_dir(const ExperimentConfig& cfg, uint64_t seed) {
    return std::filesystem::path(cfg.out_dir) / ("seed_" + std::to_string(seed));
}

bool try_load(const std::filesystem::path& path, const model::ModelConfig& want, ModelRef& out) {
    if (!std::filesystem::exists(path)) {
        return false;
    }
    try {
        Checkpoint ck = load_checkpoint(path);
        if (!(ck.config == want)) {
            return false;
        }
        out = ck.model;
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

}  // namespace

ExperimentArtifacts prepare_experiment(const ExperimentConfig& cfg, uint64_t seed,
                                       bool use_cache) {
    ExperimentArtifacts art;
    auto specs = cfg.data.all();
    for (auto& s : specs) {
        s.seed = mix_seed(s.seed, seed);
    }
    art.tokenizer = data::Tokenizer::build(specs);
    art.pretrain_corpus = data::generate(specs[0], art.tokenizer);
    art.corpus_a = data::generate(specs[1], art.tokenizer);
    art.corpus_b = data::generate(specs[2], art.tokenizer);
    art.adaptation_corpus = data::generate(specs[3], art.tokenizer);

    const model::ModelConfig want = resolved_model_config(cfg, art.tokenizer, seed);
    const auto dir = seed_dir(cfg, seed);
    std::filesystem::create_directories(dir);

    if (!(use_cache && try_load(dir / "base.ckpt", want, art.base))) {
        art.base = pretrain(cfg, art.tokenizer, art.pretrain_corpus, seed);
        save_checkpoint(*art.base, "pretrain", dir / "base.ckpt");
    }

    auto load_or_finetune = [&](const data::Corpus& corpus, const std::string& tag,
                                uint64_t ft_seed) {
        std::vector<ModelRef> ckpts;
        bool cached = use_cache;
        for (int step : cfg.checkpoint_schedule) {
            ModelRef m;
            if (!cached ||
                !try_load(dir / ("ft_" + tag + "_" + std::to_string(step) + ".ckpt"), want, m)) {
                cached = false;
                break;
            }
            ckpts.push_back(m);
        }
        if (!cached || ckpts.size() != cfg.checkpoint_schedule.size()) {
            ckpts = finetune(*art.base, corpus, cfg, ft_seed);
            for (size_t i = 0; i < ckpts.size(); ++i) {
                const int step = cfg.checkpoint_schedule[i];
                save_checkpoint(*ckpts[i], "finetune:" + tag + ":step=" + std::to_string(step),
                                dir / ("ft_" + tag + "_" + std::to_string(step) + ".ckpt"));
            }
        }
        return ckpts;
    };
    art.checkpoints_a = load_or_finetune(art.corpus_a, "a", mix_seed(seed, 0xa));
    art.checkpoints_b = load_or_finetune(art.corpus_b, "b", mix_seed(seed, 0xb));
    return art;
}

// ---------------------------------------------------------------------------
// studies
// ---------------------------------------------------------------------------

namespace {

data::Batch fixed_eval_batch(const data::Corpus& corpus, int batch_size, int seq_len,
                             uint64_t seed) {
    data::BatchStream stream(corpus, batch_size, seq_len, seed, /*validation=*/true);
    return stream.next();
}

struct StudyContext {
    const ExperimentConfig& cfg;
    const ExperimentArtifacts& art;
    uint64_t seed;
    int seq_len;
    int batch_size;

    double eval_adaptation(const ForwardFn& fwd) const {
        return evaluate(fwd, art.adaptation_corpus, seq_len, batch_size,
                        cfg.optim.eval_batches, mix_seed(seed, 0x6576616cULL));
    }
};

}  // namespace

void study_divergence(const ExperimentConfig& cfg, const ExperimentArtifacts& art,
                      uint64_t seed, MetricsCsv& csv) {
    const int seq_len = cfg.model.context_length;
    const int bs = cfg.optim.batch_size;
    StudyContext ctx{cfg, art, seed, seq_len, bs};
    const auto adapt_batch =
        fixed_eval_batch(art.adaptation_corpus, bs, seq_len, mix_seed(seed, 0x61646170ULL));
    const auto pre_batch =
        fixed_eval_batch(art.pretrain_corpus, bs, seq_len, mix_seed(seed, 0x707265ULL));
    const uint64_t cap_seed = mix_seed(seed, 0x636b61ULL);

    std::vector<Series> loss_vs_step(2);
    loss_vs_step[0].name = "activation_interp";
    loss_vs_step[1].name = "full_router";
    Series cka_adapt_series{"cka_adapt", {}, {}};
    std::vector<Series> loss_vs_cka_adapt(1), loss_vs_cka_pre(1);
    loss_vs_cka_adapt[0].name = "activation_interp";
    loss_vs_cka_pre[0].name = "activation_interp";

    for (size_t ti = 0; ti < cfg.checkpoint_schedule.size(); ++ti) {
        const int step = cfg.checkpoint_schedule[ti];
        const ModelRef a = art.checkpoints_a[ti];
        const ModelRef b = art.checkpoints_b[ti];
        const double t0 = now_seconds();

        const auto traces_a_adapt = capture_activations(forward_fn(a), adapt_batch, "a",
                                                        "adaptation", cfg.cka_row_cap, cap_seed);
        const auto traces_b_adapt = capture_activations(forward_fn(b), adapt_batch, "b",
                                                        "adaptation", cfg.cka_row_cap, cap_seed);
        const auto traces_a_pre = capture_activations(forward_fn(a), pre_batch, "a",
                                                      "pretrain", cfg.cka_row_cap, cap_seed);
        const auto traces_b_pre = capture_activations(forward_fn(b), pre_batch, "b",
                                                      "pretrain", cfg.cka_row_cap, cap_seed);
        const double cka_adapt = mean_layer_cka(traces_a_adapt, traces_b_adapt);
        const double cka_pre = mean_layer_cka(traces_a_pre, traces_b_pre);

        // static merging: sweep alpha, keep the best
        double best_ce = std::numeric_limits<double>::infinity();
        double best_alpha = cfg.alpha_grid.front();
        double fixed_half_ce = std::numeric_limits<double>::quiet_NaN();
        for (double alpha : cfg.alpha_grid) {
            merge::MergeSpec spec{merge::MergeMethod::ActivationInterp, alpha, 1, false};
            auto merged = merge::build_merged(spec, {a, b}, art.base);
            const double ce = ctx.eval_adaptation(forward_fn(merged));
            if (ce < best_ce) {
                best_ce = ce;
                best_alpha = alpha;
            }
            if (alpha == 0.5) {
                fixed_half_ce = ce;
            }
        }

        // learned merging: full-layer router with the configured budget
        merge::MergeSpec router_spec{merge::MergeMethod::FullRouter, 0.5, 1, false};
        auto merged_router = merge::build_merged(router_spec, {a, b}, art.base);
        auto curve =
            merge::train_router(*merged_router, art.adaptation_corpus,
                                router_train_config(cfg, mix_seed(seed, step)));
        const double router_ce = curve.back().val_ce;

        const double dt = now_seconds() - t0;
        MetricsRow row;
        row.study = "divergence";
        row.seed = seed;
        row.step = step;
        row.cka_adapt = cka_adapt;
        row.cka_pretrain = cka_pre;
        row.divergence = 1.0 - cka_adapt;
        row.seconds = dt;

        row.method = "activation_interp";
        row.alpha = best_alpha;
        row.ce_loss = best_ce;
        csv.write(row);

        row.method = "activation_interp_fixed";
        row.alpha = 0.5;
        row.ce_loss = fixed_half_ce;
        csv.write(row);

        row.method = "full_router";
        row.alpha.reset();
        row.ce_loss = router_ce;
        csv.write(row);

        MetricsRow srow;
        srow.study = "divergence";
        srow.seed = seed;
        srow.step = step;
        srow.seconds = 0.0;
        srow.method = "specialist_a";
        srow.ce_loss = evaluate(forward_fn(a), art.corpus_a, seq_len, bs,
                                cfg.optim.eval_batches, mix_seed(seed, 0x65761ULL));
        csv.write(srow);
        srow.method = "specialist_b";
        srow.ce_loss = evaluate(forward_fn(b), art.corpus_b, seq_len, bs,
                                cfg.optim.eval_batches, mix_seed(seed, 0x65762ULL));
        csv.write(srow);

        loss_vs_step[0].x.push_back(step);
        loss_vs_step[0].y.push_back(best_ce);
        loss_vs_step[1].x.push_back(step);
        loss_vs_step[1].y.push_back(router_ce);
        cka_adapt_series.x.push_back(step);
        cka_adapt_series.y.push_back(cka_adapt);
        loss_vs_cka_adapt[0].x.push_back(cka_adapt);
        loss_vs_cka_adapt[0].y.push_back(best_ce);
        loss_vs_cka_pre[0].x.push_back(cka_pre);
        loss_vs_cka_pre[0].y.push_back(best_ce);
    }

    const auto dir = seed_dir(cfg, seed);
    write_svg(dir / "divergence_loss_vs_step.svg",
              line_chart_svg("merging loss vs fine-tune step", "fine-tune step", "CE loss",
                             loss_vs_step));
    write_svg(dir / "divergence_cka_vs_step.svg",
              line_chart_svg("inter-model CKA vs fine-tune step", "fine-tune step", "mean CKA",
                             {cka_adapt_series}));
    write_svg(dir / "divergence_loss_vs_cka_adapt.svg",
              line_chart_svg("merging loss vs CKA (adaptation data)", "mean CKA", "CE loss",
                             loss_vs_cka_adapt));
    write_svg(dir / "divergence_loss_vs_cka_pretrain.svg",
              line_chart_svg("merging loss vs CKA (pretraining data)", "mean CKA", "CE loss",
                             loss_vs_cka_pre));
}

void study_routing_ladder(const ExperimentConfig& cfg, const ExperimentArtifacts& art,
                          uint64_t seed, MetricsCsv& csv) {
    const int seq_len = cfg.model.context_length;
    const int bs = cfg.optim.batch_size;
    StudyContext ctx{cfg, art, seed, seq_len, bs};
    const ModelRef a = art.checkpoints_a.back();
    const ModelRef b = art.checkpoints_b.back();

    auto emit = [&](const std::string& method, double ce, std::optional<double> alpha,
                    std::optional<int> k, double secs) {
        MetricsRow row;
        row.study = "ladder";
        row.seed = seed;
        row.method = method;
        row.step = cfg.checkpoint_schedule.back();
        row.alpha = alpha;
        row.k = k;
        row.ce_loss = ce;
        row.seconds = secs;
        csv.write(row);
    };

    Series ladder{"ce_loss", {}, {}};
    std::vector<std::string> ladder_labels;
    auto record = [&](const std::string& method, double ce) {
        ladder.x.push_back(static_cast<double>(ladder.y.size()));
        ladder.y.push_back(ce);
        ladder_labels.push_back(method);
    };

    // untrained uniform-routing baseline
    {
        const double t0 = now_seconds();
        merge::MergeSpec spec{merge::MergeMethod::FullRouter, 0.5, 1, false};
        auto merged = merge::build_merged(spec, {a, b}, art.base);
        const double ce = ctx.eval_adaptation(forward_fn(merged));
        emit("uniform_router", ce, std::nullopt, std::nullopt, now_seconds() - t0);
        record("uniform_router", ce);
    }

    // static interpolation family: best alpha over the grid
    for (merge::MergeMethod method : {merge::MergeMethod::Lerp, merge::MergeMethod::Slerp,
                                      merge::MergeMethod::ActivationInterp}) {
        const double t0 = now_seconds();
        double best_ce = std::numeric_limits<double>::infinity();
        double best_alpha = cfg.alpha_grid.front();
        for (double alpha : cfg.alpha_grid) {
            merge::MergeSpec spec{method, alpha, 1, false};
            auto merged = merge::build_merged(spec, {a, b}, art.base);
            const double ce = ctx.eval_adaptation(forward_fn(merged));
            if (ce < best_ce) {
                best_ce = ce;
                best_alpha = alpha;
            }
        }
        emit(merge::merge_method_name(method), best_ce, best_alpha, std::nullopt,
             now_seconds() - t0);
        record(merge::merge_method_name(method), best_ce);
    }

    // router family: identical training budgets
    std::vector<merge::MergeSpec> router_specs = {
        {merge::MergeMethod::SingleRouter, 0.5, 1, false},
        {merge::MergeMethod::FullRouter, 0.5, 1, false},
        {merge::MergeMethod::FullRouterBase, 0.5, 1, false},
        {merge::MergeMethod::MultiLayer, 0.5, 1, false},
        {merge::MergeMethod::MultiLayer, 0.5, 2, false},
        {merge::MergeMethod::MultiLayer, 0.5, 3, false},
        {merge::MergeMethod::FullRouter, 0.5, 1, true},  // 2-layer MLP router ablation
    };
    for (const auto& spec : router_specs) {
        const double t0 = now_seconds();
        auto merged = merge::build_merged(spec, {a, b}, art.base);
        auto curve = merge::train_router(*merged, art.adaptation_corpus,
                                         router_train_config(cfg, seed));
        const double ce = curve.back().val_ce;
        emit(spec.label(), ce, std::nullopt,
             spec.method == merge::MergeMethod::MultiLayer ? std::optional<int>(spec.k)
                                                           : std::nullopt,
             now_seconds() - t0);
        record(spec.label(), ce);
    }

    // direct fine-tuning of the base on the adaptation task, same step budget
    {
        const double t0 = now_seconds();
        auto ft = art.base->clone();
        ft->set_requires_grad(model::ParamPolicy::MlpOnly);
        TrainOptions opt;
        opt.steps = cfg.optim.finetune_steps;
        opt.batch_size = bs;
        opt.eval_interval = std::max(1, cfg.optim.finetune_steps / 4);
        opt.eval_batches = cfg.optim.eval_batches;
        opt.seed = mix_seed(seed, 0x6674ULL);
        opt.adam = cfg.optim.adam(cfg.optim.finetune_lr);
        train_model(*ft, ft->mlp_params(), art.adaptation_corpus, opt);
        const double ce = ctx.eval_adaptation(forward_fn(std::shared_ptr<TransformerModel>(ft)));
        emit("finetune_baseline", ce, std::nullopt, std::nullopt, now_seconds() - t0);
        record("finetune_baseline", ce);
    }

    write_svg(seed_dir(cfg, seed) / "ladder.svg",
              line_chart_svg("merging method ladder (lower is better)", "method index",
                             "CE loss", {ladder}));
}

void study_layer_similarity(const ExperimentConfig& cfg, const ExperimentArtifacts& art,
                            uint64_t seed, MetricsCsv& csv) {
    const int seq_len = cfg.model.context_length;
    const int bs = cfg.optim.batch_size;
    const ModelRef a = art.checkpoints_a.back();
    const ModelRef b = art.checkpoints_b.back();
    const uint64_t cap_seed = mix_seed(seed, 0x636b61ULL);
    const auto dir = seed_dir(cfg, seed);

    struct DatasetCase {
        std::string name;
        const data::Corpus* corpus;
    };
    for (const DatasetCase& dc : {DatasetCase{"adaptation", &art.adaptation_corpus},
                                  DatasetCase{"pretrain", &art.pretrain_corpus}}) {
        const auto batch = fixed_eval_batch(*dc.corpus, bs, seq_len,
                                            mix_seed(seed, std::hash<std::string>{}(dc.name)));
        const auto ta = capture_activations(forward_fn(a), batch, "a", dc.name,
                                            cfg.cka_row_cap, cap_seed);
        const auto tb = capture_activations(forward_fn(b), batch, "b", dc.name,
                                            cfg.cka_row_cap, cap_seed);
        struct MatrixCase {
            std::string name;
            analysis::LayerSimilarityMatrix m;
        };
        std::vector<MatrixCase> cases;
        cases.push_back({"intra_a", analysis::layer_similarity(
                                        ta, ta, analysis::SimilarityMode::Intra, dc.name)});
        cases.push_back({"intra_b", analysis::layer_similarity(
                                        tb, tb, analysis::SimilarityMode::Intra, dc.name)});
        cases.push_back({"inter", analysis::layer_similarity(
                                      ta, tb, analysis::SimilarityMode::Inter, dc.name)});
        for (const auto& c : cases) {
            const std::string stem = "layers_" + c.name + "_" + dc.name;
            atomic_write(dir / (stem + ".csv"), c.m.to_csv());
            std::vector<double> vals;
            for (const auto& cell : c.m.cells) {
                vals.push_back(cell.value);
            }
            write_svg(dir / (stem + ".svg"),
                      heatmap_svg(c.name + " CKA (" + dc.name + ")", vals, c.m.rows, c.m.cols));

            // summary row: diagonal mean in cka_adapt, off-diagonal mean in cka_pretrain
            double diag = 0.0;
            double off = 0.0;
            int n_off = 0;
            for (int i = 0; i < c.m.rows; ++i) {
                for (int j = 0; j < c.m.cols; ++j) {
                    if (i == j) {
                        diag += c.m.value(i, j);
                    } else {
                        off += c.m.value(i, j);
                        ++n_off;
                    }
                }
            }
            MetricsRow row;
            row.study = "layers";
            row.seed = seed;
            row.method = c.name + "_" + dc.name;
            row.step = cfg.checkpoint_schedule.back();
            row.cka_adapt = diag / c.m.rows;
            row.cka_pretrain = n_off ? off / n_off : 0.0;
            csv.write(row);
        }
    }
}

void run_study(const ExperimentConfig& cfg, const std::string& which) {
    MetricsCsv csv(std::filesystem::path(cfg.out_dir) / (which + "_metrics.csv"));
    for (uint64_t seed : cfg.seeds) {
        const ExperimentArtifacts art = prepare_experiment(cfg, seed);
        if (which == "divergence") {
            study_divergence(cfg, art, seed, csv);
        } else if (which == "ladder") {
            study_routing_ladder(cfg, art, seed, csv);
        } else if (which == "layers") {
            study_layer_similarity(cfg, art, seed, csv);
        } else {
            throw ConfigError("unknown study: " + which);
        }
    }
}

void plot_from_csv(const std::filesystem::path& csv_path,
                   const std::filesystem::path& out_dir) {
    std::ifstream in(csv_path);
    if (!in) {
        throw std::runtime_error("cannot open " + csv_path.string());
    }
    std::string line;
    std::getline(in, line);  // header
    std::map<std::string, Series> by_method;
    while (std::getline(in, line)) {
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string f;
        while (std::getline(ls, f, ',')) {
            fields.push_back(f);
        }
        if (fields.size() < 11 || fields[5].empty()) {
            continue;
        }
        const std::string key = fields[1] + "/seed" + fields[10];
        auto& s = by_method[key];
        s.name = key;
        s.x.push_back(std::stod(fields[2]));
        s.y.push_back(std::stod(fields[5]));
    }
    std::vector<Series> series;
    for (auto& [key, s] : by_method) {
        series.push_back(std::move(s));
    }
    write_svg(out_dir / (csv_path.stem().string() + ".svg"),
              line_chart_svg(csv_path.stem().string(), "step", "CE loss", series));
}

}  // namespace mergelab::harness
