// Acceptance harness: one pass/fail line per criterion, exit code = number of
// failures. Criteria 1-5 and 10 are self-contained property checks; 6-9 share
// one set of trained artifacts across three experiment seeds.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <vector>

#include "mergelab/harness.hpp"

using namespace mergelab;
using namespace mergelab::nn;
using namespace mergelab::harness;

namespace {

int g_failures = 0;

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

void report(int criterion, bool pass, const std::string& what, double seconds) {
    std::printf("[%s] criterion %2d: %s (%.1fs)\n", pass ? "PASS" : "FAIL", criterion,
                what.c_str(), seconds);
    std::fflush(stdout);
    if (!pass) {
        ++g_failures;
    }
}

// --------------------------------------------------------------------------
// shared acceptance-scale configuration (desk scale, minutes not hours)
// --------------------------------------------------------------------------

ExperimentConfig acceptance_config(const std::string& out_dir) {
    ExperimentConfig cfg;
    cfg.model.n_layers = 4;
    cfg.model.n_heads = 4;
    cfg.model.d_model = 32;
    cfg.model.d_mlp = 128;
    cfg.model.context_length = 48;
    cfg.model.seed = 1;
    cfg.optim.batch_size = 8;
    cfg.optim.lr = 1e-3;
    cfg.optim.finetune_lr = 3e-4;
    cfg.optim.router_lr = 3e-2;
    cfg.optim.pretrain_steps = 1200;
    cfg.optim.finetune_steps = 1200;
    cfg.optim.router_steps = 300;
    cfg.optim.eval_interval = 100;
    cfg.optim.eval_batches = 16;
    cfg.data.pretrain = {data::TaskKind::PretrainMix, 120000, 12, 4, 11, 0.0};
    cfg.data.specialist_a = {data::TaskKind::Math, 60000, 12, 4, 12, 0.25};
    cfg.data.specialist_b = {data::TaskKind::Code, 60000, 12, 4, 13, 0.25};
    cfg.data.adaptation = {data::TaskKind::CrossDomain, 60000, 12, 4, 14, 0.5};
    cfg.checkpoint_schedule = {0, 50, 100, 200, 400, 800, 1200};
    cfg.seeds = {1, 2, 3};
    cfg.out_dir = out_dir;
    cfg.cka_row_cap = 256;
    cfg.alpha_grid = {0.0, 0.25, 0.5, 0.75, 1.0};
    cfg.validate();
    return cfg;
}

ExperimentConfig micro_config(const std::string& out_dir) {
    auto cfg = acceptance_config(out_dir);
    cfg.model.d_model = 16;
    cfg.model.d_mlp = 64;
    cfg.model.context_length = 24;
    cfg.optim.pretrain_steps = 30;
    cfg.optim.finetune_steps = 20;
    cfg.optim.router_steps = 10;
    cfg.optim.eval_interval = 10;
    cfg.optim.eval_batches = 2;
    cfg.data.pretrain.size_chars = 20000;
    cfg.data.specialist_a.size_chars = 12000;
    cfg.data.specialist_b.size_chars = 12000;
    cfg.data.adaptation.size_chars = 12000;
    cfg.checkpoint_schedule = {0, 10, 20};
    cfg.seeds = {1};
    cfg.validate();
    return cfg;
}

struct CsvRow {
    std::string study, method;
    int step = 0;
    double alpha = NAN, ce = NAN, cka_adapt = NAN, cka_pre = NAN, divergence = NAN;
    int k = -1;
    uint64_t seed = 0;
};

std::vector<CsvRow> read_rows(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<CsvRow> rows;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            f.push_back(cell);
        }
        f.resize(11);
        CsvRow r;
        r.study = f[0];
        r.method = f[1];
        r.step = std::stoi(f[2]);
        if (!f[3].empty()) r.alpha = std::stod(f[3]);
        if (!f[4].empty()) r.k = std::stoi(f[4]);
        if (!f[5].empty()) r.ce = std::stod(f[5]);
        if (!f[6].empty()) r.cka_adapt = std::stod(f[6]);
        if (!f[7].empty()) r.cka_pre = std::stod(f[7]);
        if (!f[8].empty()) r.divergence = std::stod(f[8]);
        r.seed = std::stoull(f[10]);
        rows.push_back(r);
    }
    return rows;
}

model::ModelConfig sub1k_config() {
    model::ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.n_heads = 1;
    cfg.d_model = 4;
    cfg.d_mlp = 8;
    cfg.vocab_size = 7;
    cfg.context_length = 6;
    cfg.seed = 3;
    return cfg;
}

// --------------------------------------------------------------------------
// criteria 1-5: self-contained property checks
// --------------------------------------------------------------------------

void criterion_1_numerics() {
    const double t0 = now_s();
    model::TransformerModel m(sub1k_config());
    m.set_requires_grad(model::ParamPolicy::All);
    int n_params = 0;
    for (auto& [name, p] : m.named_params()) {
        n_params += p->size();
    }
    std::vector<int> toks = {1, 4, 2, 6, 0};
    std::vector<int> targets = {4, 2, 6, 0, 3};
    auto loss_value = [&] {
        Tape t;
        t.set_recording(false);
        return cross_entropy(t, m.forward(t, toks), targets)->data[0];
    };
    Tape tape;
    auto loss = cross_entropy(tape, m.forward(tape, toks), targets);
    for (auto& [name, p] : m.named_params()) {
        p->zero_grad();
    }
    backward(loss, tape);

    bool ok = n_params <= 1000;
    const double h = 5e-6;
    double worst = 0;
    for (auto& [name, p] : m.named_params()) {
        for (int i = 0; i < p->size(); ++i) {
            const double keep = p->data[i];
            p->data[i] = keep + h;
            const double up = loss_value();
            p->data[i] = keep - h;
            const double down = loss_value();
            p->data[i] = keep;
            const double fd = (up - down) / (2 * h);
            const double ad = p->grad[i];
            const double rel =
                std::fabs(fd - ad) / std::max({std::fabs(fd), std::fabs(ad), 1e-6});
            worst = std::max(worst, rel);
        }
    }
    ok = ok && worst < 1e-4;
    const double dt = now_s() - t0;
    ok = ok && dt < 10.0;
    std::ostringstream os;
    os << "all " << n_params << " gradients vs central differences, worst rel err " << worst;
    report(1, ok, os.str(), dt);
}

void criterion_2_cka() {
    const double t0 = now_s();
    Rng rng(42);
    auto acts = [&](int n, int d) {
        analysis::ActivationMatrix m;
        m.n = n;
        m.d = d;
        m.x.resize(static_cast<size_t>(n) * d);
        for (auto& v : m.x) {
            v = rng.next_gaussian();
        }
        return m;
    };
    auto x = acts(64, 32);
    auto y = acts(64, 32);
    bool ok = std::fabs(analysis::cka(x, x).value - 1.0) < 1e-12;

    // isotropic scaling
    auto xs = x;
    for (auto& v : xs.x) {
        v *= 11.75;
    }
    ok = ok && std::fabs(analysis::cka(xs, y).value - analysis::cka(x, y).value) < 1e-9;
    // bias offsets
    auto xb = x;
    for (int i = 0; i < xb.n; ++i) {
        for (int j = 0; j < xb.d; ++j) {
            xb.x[static_cast<size_t>(i) * xb.d + j] += 1.0 + 0.1 * j;
        }
    }
    ok = ok && std::fabs(analysis::cka(xb, y).value - analysis::cka(x, y).value) < 1e-9;
    // orthogonal transform via Gram-Schmidt on a random matrix
    const int d = 32;
    std::vector<double> q(static_cast<size_t>(d) * d);
    for (auto& v : q) {
        v = rng.next_gaussian();
    }
    for (int i = 0; i < d; ++i) {
        double* qi = q.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < i; ++j) {
            const double* qj = q.data() + static_cast<size_t>(j) * d;
            double dot = 0;
            for (int k = 0; k < d; ++k) {
                dot += qi[k] * qj[k];
            }
            for (int k = 0; k < d; ++k) {
                qi[k] -= dot * qj[k];
            }
        }
        double norm = 0;
        for (int k = 0; k < d; ++k) {
            norm += qi[k] * qi[k];
        }
        norm = std::sqrt(norm);
        for (int k = 0; k < d; ++k) {
            qi[k] /= norm;
        }
    }
    auto xq = x;
    for (int i = 0; i < x.n; ++i) {
        for (int j = 0; j < d; ++j) {
            double acc = 0;
            for (int k = 0; k < d; ++k) {
                acc += x.at(i, k) * q[static_cast<size_t>(j) * d + k];
            }
            xq.x[static_cast<size_t>(i) * d + j] = acc;
        }
    }
    ok = ok && std::fabs(analysis::cka(xq, y).value - analysis::cka(x, y).value) < 1e-9;

    // HSIC vs the elementwise centered-trace oracle
    const int n = 64;
    auto kx = analysis::gram(x);
    auto ky = analysis::gram(y);
    auto center_oracle = [n](std::vector<double> k) {
        std::vector<double> row(n, 0), col(n, 0);
        double tot = 0;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                const double v = k[static_cast<size_t>(i) * n + j];
                row[i] += v / n;
                col[j] += v / n;
                tot += v / (static_cast<double>(n) * n);
            }
        }
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                k[static_cast<size_t>(i) * n + j] += tot - row[i] - col[j];
            }
        }
        return k;
    };
    auto kc = center_oracle(kx);
    auto lc = center_oracle(ky);
    double tr = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            tr += kc[static_cast<size_t>(i) * n + j] * lc[static_cast<size_t>(j) * n + i];
        }
    }
    const double oracle = tr / ((n - 1.0) * (n - 1.0));
    const double got = analysis::hsic(analysis::center(kx, n), analysis::center(ky, n), n);
    ok = ok && std::fabs(got - oracle) <= 1e-10 * std::max(1.0, std::fabs(oracle));

    const double dt = now_s() - t0;
    ok = ok && dt < 5.0;
    report(2, ok, "CKA self-similarity, invariances, HSIC oracle on 64x32 inputs", dt);
}

void criterion_3_interpolation() {
    const double t0 = now_s();
    std::vector<double> a = {0.6, -0.8, 0.0};
    std::vector<double> b = {0.0, 0.6, 0.8};
    bool ok = merge::lerp(a, b, 1.0) == a && merge::lerp(a, b, 0.0) == b;
    ok = ok && merge::slerp(a, b, 0.0) == a && merge::slerp(a, b, 1.0) == b;
    for (double t : {0.2, 0.5, 0.8}) {
        auto v = merge::slerp(a, b, t);
        double norm = 0;
        for (double x : v) {
            norm += x * x;
        }
        ok = ok && std::fabs(std::sqrt(norm) - 1.0) < 1e-10;
    }
    // colinear fallback: dot of the normalized directions is exactly 1 here
    std::vector<double> par = {1.2, -1.6, 0.0};
    auto fell_back = merge::slerp(a, par, 0.3);
    auto want = merge::lerp(a, par, 0.7);
    for (int i = 0; i < 3; ++i) {
        ok = ok && std::fabs(fell_back[i] - want[i]) < 1e-12;
    }
    // anti-parallel lerp midpoint
    std::vector<double> neg = {-0.6, 0.8, 0.0};
    for (double v : merge::lerp(a, neg, 0.5)) {
        ok = ok && v == 0.0;
    }
    report(3, ok, "LERP/SLERP endpoints, norm preservation, colinear fallback", now_s() - t0);
}

void criterion_4_moe() {
    const double t0 = now_s();
    model::ModelConfig cfg;
    cfg.n_layers = 3;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.d_mlp = 16;
    cfg.vocab_size = 13;
    cfg.context_length = 16;
    cfg.seed = 5;
    auto base = std::make_shared<model::TransformerModel>(cfg);
    auto a = base->clone();
    auto b = base->clone();
    Rng rng(9);
    for (auto m : {a, b}) {
        for (auto& p : m->mlp_params()) {
            for (auto& v : p->data) {
                v += 0.05 * rng.next_gaussian();
            }
        }
    }
    std::vector<int> toks(14);
    for (size_t i = 0; i < toks.size(); ++i) {
        toks[i] = static_cast<int>((i * 7 + 2) % 13);
    }
    Tape tape;
    tape.set_recording(false);

    // routing weights sum to 1 for every token and layer, off uniform init
    bool ok = true;
    auto routed = merge::build_merged({merge::MergeMethod::FullRouterBase, 0.5, 1, false},
                                      {a, b}, base);
    for (auto& p : routed->router_params()) {
        for (auto& v : p->data) {
            v += 0.3 * rng.next_gaussian();
        }
    }
    std::vector<TensorRef> weights;
    routed->forward(tape, toks, nullptr, {}, &weights);
    ok = ok && weights.size() == 3;
    for (const auto& w : weights) {
        for (int r = 0; r < w->rows(); ++r) {
            double s = 0;
            for (int c = 0; c < w->cols(); ++c) {
                s += w->at(r, c);
            }
            ok = ok && std::fabs(s - 1.0) < 1e-12;
        }
    }

    // one-hot routing == the underlying specialist
    auto max_diff = [](const TensorRef& x, const TensorRef& y) {
        double d = 0;
        for (int i = 0; i < x->size(); ++i) {
            d = std::max(d, std::fabs(x->data[i] - y->data[i]));
        }
        return d;
    };
    auto onehot_a = merge::build_merged({merge::MergeMethod::ActivationInterp, 1.0, 1, false},
                                        {a, b}, base);
    auto onehot_b = merge::build_merged({merge::MergeMethod::ActivationInterp, 0.0, 1, false},
                                        {a, b}, base);
    ok = ok && max_diff(onehot_a->forward(tape, toks), a->forward(tape, toks)) < 1e-10;
    ok = ok && max_diff(onehot_b->forward(tape, toks), b->forward(tape, toks)) < 1e-10;

    // zero-init router == uniform activation interpolation, exactly
    auto uniform = merge::build_merged({merge::MergeMethod::ActivationInterp, 0.5, 1, false},
                                       {a, b}, base);
    auto zero_router =
        merge::build_merged({merge::MergeMethod::FullRouter, 0.5, 1, false}, {a, b}, base);
    ok = ok &&
         max_diff(zero_router->forward(tape, toks), uniform->forward(tape, toks)) == 0.0;

    report(4, ok, "routing simplex, one-hot specialist recovery, zero-init uniformity",
           now_s() - t0);
}

void criterion_5_freezing(const std::filesystem::path& tmp) {
    const double t0 = now_s();
    auto cfg = micro_config((tmp / "freeze").string());
    auto specs = cfg.data.all();
    auto tok = data::Tokenizer::build(specs);
    auto corpus = data::generate(cfg.data.specialist_a, tok);
    auto adapt = data::generate(cfg.data.adaptation, tok);
    auto base = std::make_shared<model::TransformerModel>(resolved_model_config(cfg, tok, 1));

    const uint64_t trunk_before = base->trunk_hash();
    auto ckpts = finetune(*base, corpus, cfg, 7);
    bool ok = true;
    for (auto& m : ckpts) {
        ok = ok && m->trunk_hash() == trunk_before;
    }

    auto a = ckpts.back();
    auto b = base->clone();
    auto merged =
        merge::build_merged({merge::MergeMethod::FullRouter, 0.5, 1, false}, {a, b}, base);
    const uint64_t frozen = merged->expert_and_trunk_hash();
    merge::train_router(*merged, adapt, router_train_config(cfg, 7));
    ok = ok && merged->expert_and_trunk_hash() == frozen;
    report(5, ok, "frozen tensor sets hash-identical after fine-tune and router training",
           now_s() - t0);
}

// --------------------------------------------------------------------------
// criteria 6-9: trained studies over three seeds
// --------------------------------------------------------------------------

struct StudyResults {
    ExperimentConfig cfg;
    std::map<uint64_t, ExperimentArtifacts> artifacts;
    std::filesystem::path div_csv, ladder_csv, layers_csv;
    double prepare_plus_divergence_seconds = 0;
};

StudyResults run_studies(const std::filesystem::path& tmp) {
    StudyResults res;
    res.cfg = acceptance_config((tmp / "studies").string());
    res.div_csv = tmp / "studies" / "divergence_metrics.csv";
    res.ladder_csv = tmp / "studies" / "ladder_metrics.csv";
    res.layers_csv = tmp / "studies" / "layers_metrics.csv";
    const double t0 = now_s();
    {
        MetricsCsv csv(res.div_csv);
        for (uint64_t seed : res.cfg.seeds) {
            res.artifacts.emplace(seed, prepare_experiment(res.cfg, seed));
            study_divergence(res.cfg, res.artifacts.at(seed), seed, csv);
        }
    }
    res.prepare_plus_divergence_seconds = now_s() - t0;
    {
        MetricsCsv csv(res.ladder_csv);
        for (uint64_t seed : res.cfg.seeds) {
            study_routing_ladder(res.cfg, res.artifacts.at(seed), seed, csv);
        }
    }
    {
        MetricsCsv csv(res.layers_csv);
        for (uint64_t seed : res.cfg.seeds) {
            study_layer_similarity(res.cfg, res.artifacts.at(seed), seed, csv);
        }
    }
    return res;
}

void criterion_6_divergence(const StudyResults& res) {
    auto rows = read_rows(res.div_csv);
    bool cka_ok = true;
    int interior_seeds = 0;
    for (uint64_t seed : res.cfg.seeds) {
        std::vector<double> ckas;
        std::vector<double> losses;
        for (const auto& r : rows) {
            // the equal-weight merge curve: the compatibility signal should not be
            // confounded by the alpha sweep collapsing onto a single endpoint
            if (r.seed == seed && r.method == "activation_interp_fixed") {
                ckas.push_back(r.cka_adapt);
                losses.push_back(r.ce);
            }
        }
        // (a) starts at 1, decreases with at most one inversion
        if (ckas.size() < 6 || std::fabs(ckas.front() - 1.0) > 1e-6) {
            cka_ok = false;
        }
        int inversions = 0;
        for (size_t i = 1; i < ckas.size(); ++i) {
            if (ckas[i] > ckas[i - 1] + 1e-12) {
                ++inversions;
            }
        }
        if (inversions > 1 || ckas.back() >= ckas.front()) {
            cka_ok = false;
        }
        // (b) interior argmin of the merging loss
        size_t argmin = 0;
        for (size_t i = 1; i < losses.size(); ++i) {
            if (losses[i] < losses[argmin]) {
                argmin = i;
            }
        }
        if (!losses.empty() && argmin != 0 && argmin != losses.size() - 1) {
            ++interior_seeds;
        }
    }
    // (c) scatter artifacts exist for both datasets
    bool scatter_ok = true;
    for (uint64_t seed : res.cfg.seeds) {
        const auto dir =
            std::filesystem::path(res.cfg.out_dir) / ("seed_" + std::to_string(seed));
        scatter_ok = scatter_ok &&
                     std::filesystem::exists(dir / "divergence_loss_vs_cka_adapt.svg") &&
                     std::filesystem::exists(dir / "divergence_loss_vs_cka_pretrain.svg");
    }
    const bool time_ok = res.prepare_plus_divergence_seconds < 1800.0;
    const bool ok = cka_ok && interior_seeds * 3 >= 2 * 3 && scatter_ok && time_ok;
    std::ostringstream os;
    os << "CKA monotone-ish from 1 (" << (cka_ok ? "yes" : "no") << "), interior argmin in "
       << interior_seeds << "/3 seeds, scatters " << (scatter_ok ? "written" : "missing")
       << ", " << static_cast<int>(res.prepare_plus_divergence_seconds) << "s of 1800s";
    report(6, cka_ok && interior_seeds >= 2 && scatter_ok && time_ok, os.str(),
           res.prepare_plus_divergence_seconds);
    (void)ok;
}

void criterion_7_ladder(const StudyResults& res) {
    const double t0 = now_s();
    auto rows = read_rows(res.ladder_csv);
    auto ce_of = [&](uint64_t seed, const std::string& method) {
        for (const auto& r : rows) {
            if (r.seed == seed && r.method == method) {
                return r.ce;
            }
        }
        return std::numeric_limits<double>::quiet_NaN();
    };
    int order_seeds = 0, plateau_seeds = 0;
    for (uint64_t seed : res.cfg.seeds) {
        const double full = ce_of(seed, "full_router");
        const double single = ce_of(seed, "single_router");
        const double best_static = std::min(
            {ce_of(seed, "lerp"), ce_of(seed, "slerp"), ce_of(seed, "activation_interp")});
        if (full <= single && single <= best_static) {
            ++order_seeds;
        }
        const double ml1 = ce_of(seed, "multi_layer_1");
        const double ml2 = ce_of(seed, "multi_layer_2");
        const double ml3 = ce_of(seed, "multi_layer_3");
        if (ml2 < ml1 && (ml2 - ml3) < (ml1 - ml2)) {
            ++plateau_seeds;
        }
    }
    // exact parameter-count ladder, checked per seed on the real artifacts
    bool params_ok = true;
    for (uint64_t seed : res.cfg.seeds) {
        const auto& art = res.artifacts.at(seed);
        std::vector<model::ModelRef> sp = {art.checkpoints_a.back(), art.checkpoints_b.back()};
        auto count = [&](merge::MergeSpec spec) {
            return merge::build_merged(spec, sp, art.base)->trainable_param_count();
        };
        std::vector<int> ladder = {
            count({merge::MergeMethod::SingleRouter, 0.5, 1, false}),
            count({merge::MergeMethod::FullRouter, 0.5, 1, false}),
            count({merge::MergeMethod::FullRouterBase, 0.5, 1, false}),
            count({merge::MergeMethod::MultiLayer, 0.5, 2, false}),
            count({merge::MergeMethod::MultiLayer, 0.5, 3, false}),
        };
        for (size_t i = 1; i < ladder.size(); ++i) {
            params_ok = params_ok && ladder[i] > ladder[i - 1];
        }
    }
    const bool ok = order_seeds >= 2 && plateau_seeds >= 2 && params_ok;
    std::ostringstream os;
    os << "router<=single<=static in " << order_seeds << "/3, multi-layer plateau in "
       << plateau_seeds << "/3, param ladder strict in 3/3: " << (params_ok ? "yes" : "no");
    report(7, ok, os.str(), now_s() - t0);
}

void criterion_8_layers(const StudyResults& res) {
    const double t0 = now_s();
    bool symmetric_ok = true, banded_ok = true, diag_ok = true;
    for (uint64_t seed : res.cfg.seeds) {
        const auto& art = res.artifacts.at(seed);
        data::BatchStream stream(art.adaptation_corpus, res.cfg.optim.batch_size,
                                 res.cfg.model.context_length, 1234 + seed, true);
        auto batch = stream.next();
        auto ta = capture_activations(forward_fn(art.checkpoints_a.back()), batch, "a",
                                      "adaptation", res.cfg.cka_row_cap, 99);
        auto tb = capture_activations(forward_fn(art.checkpoints_b.back()), batch, "b",
                                      "adaptation", res.cfg.cka_row_cap, 99);
        for (auto* traces : {&ta, &tb}) {
            auto m = analysis::layer_similarity(*traces, *traces,
                                                analysis::SimilarityMode::Intra, "adaptation");
            double adjacent = 0, distant = 0;
            int n_adj = 0, n_dist = 0;
            for (int i = 0; i < m.rows; ++i) {
                if (std::fabs(m.value(i, i) - 1.0) > 1e-9) {
                    symmetric_ok = false;
                }
                for (int j = 0; j < m.cols; ++j) {
                    if (std::fabs(m.value(i, j) - m.value(j, i)) > 1e-9) {
                        symmetric_ok = false;
                    }
                    if (std::abs(i - j) == 1) {
                        adjacent += m.value(i, j);
                        ++n_adj;
                    } else if (std::abs(i - j) > 1) {
                        distant += m.value(i, j);
                        ++n_dist;
                    }
                }
            }
            if (adjacent / n_adj <= distant / n_dist) {
                banded_ok = false;
            }
        }
        auto inter = analysis::layer_similarity(ta, tb, analysis::SimilarityMode::Inter,
                                                "adaptation");
        double diag = 0, off = 0;
        int n_off = 0;
        for (int i = 0; i < inter.rows; ++i) {
            for (int j = 0; j < inter.cols; ++j) {
                if (i == j) {
                    diag += inter.value(i, j);
                } else {
                    off += inter.value(i, j);
                    ++n_off;
                }
            }
        }
        if (diag / inter.rows <= off / n_off) {
            diag_ok = false;
        }
    }
    const bool ok = symmetric_ok && banded_ok && diag_ok;
    std::ostringstream os;
    os << "intra symmetry+unit diag: " << (symmetric_ok ? "yes" : "no")
       << ", adjacent>distant: " << (banded_ok ? "yes" : "no")
       << ", inter diag>off: " << (diag_ok ? "yes" : "no") << " (all seeds)";
    report(8, ok, os.str(), now_s() - t0);
}

void criterion_9_baseline(const StudyResults& res) {
    const double t0 = now_s();
    auto rows = read_rows(res.ladder_csv);
    int ok_seeds = 0;
    for (uint64_t seed : res.cfg.seeds) {
        double baseline = NAN;
        double best_merge = INFINITY;
        for (const auto& r : rows) {
            if (r.seed != seed || std::isnan(r.ce)) {
                continue;
            }
            if (r.method == "finetune_baseline") {
                baseline = r.ce;
            } else {
                best_merge = std::min(best_merge, r.ce);
            }
        }
        if (baseline <= best_merge) {
            ++ok_seeds;
        }
    }
    std::ostringstream os;
    os << "direct fine-tuning beats or ties best merge in " << ok_seeds << "/3 seeds";
    report(9, ok_seeds >= 2, os.str(), now_s() - t0);
}

// --------------------------------------------------------------------------
// criterion 10: infrastructure
// --------------------------------------------------------------------------

std::string strip_seconds_column(const std::filesystem::path& csv) {
    std::ifstream in(csv);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line)) {
        // drop field 9 (0-based), the wall-clock seconds
        std::vector<std::string> f;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            f.push_back(cell);
        }
        for (size_t i = 0; i < f.size(); ++i) {
            if (i == 9) {
                continue;
            }
            out << f[i] << ",";
        }
        out << "\n";
    }
    return out.str();
}

void criterion_10_infrastructure(const std::filesystem::path& tmp) {
    const double t0 = now_s();

    // byte-exact checkpoint roundtrip
    model::TransformerModel m(sub1k_config());
    const auto p1 = tmp / "rt1.ckpt";
    const auto p2 = tmp / "rt2.ckpt";
    save_checkpoint(m, "pretrain", p1);
    auto ck = load_checkpoint(p1);
    save_checkpoint(*ck.model, ck.phase, p2);
    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string{std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>()};
    };
    bool roundtrip_ok = slurp(p1) == slurp(p2) && !slurp(p1).empty();

    // the full micro pipeline twice from scratch -> identical metrics
    bool csv_ok = true;
    {
        std::vector<std::string> outputs;
        for (int run = 0; run < 2; ++run) {
            const auto dir = tmp / ("pipe" + std::to_string(run));
            std::filesystem::remove_all(dir);
            auto cfg = micro_config(dir.string());
            MetricsCsv csv(dir / "divergence_metrics.csv");
            auto art = prepare_experiment(cfg, 1, /*use_cache=*/false);
            study_divergence(cfg, art, 1, csv);
            outputs.push_back(strip_seconds_column(dir / "divergence_metrics.csv"));
        }
        csv_ok = outputs[0] == outputs[1] && outputs[0].rfind("study,", 0) == 0 &&
                 outputs[0].find("\ndivergence,") != std::string::npos;
    }

    // independent re-evaluation of >= 1% of generated samples, zero mismatches
    bool corpus_ok = true;
    {
        std::vector<data::SyntheticTaskSpec> specs;
        for (data::TaskKind kind : {data::TaskKind::Math, data::TaskKind::Code,
                                    data::TaskKind::CrossDomain, data::TaskKind::InDomainA,
                                    data::TaskKind::InDomainB, data::TaskKind::InDomainAdapt1,
                                    data::TaskKind::InDomainAdapt2}) {
            data::SyntheticTaskSpec s;
            s.kind = kind;
            s.size_chars = 30000;
            s.seed = 77;
            specs.push_back(s);
        }
        auto tok = data::Tokenizer::build(specs);
        for (const auto& s : specs) {
            auto corpus = data::generate(s, tok);
            std::istringstream is(corpus.text);
            std::string line;
            int checked = 0;
            while (std::getline(is, line)) {
                const auto arrow = line.find(" -> ");
                if (line.rfind("run:", 0) == 0 && arrow != std::string::npos) {
                    auto got = data::run_stack_program(line.substr(4, arrow - 4));
                    std::istringstream want(line.substr(arrow + 4));
                    std::vector<long long> printed;
                    long long v;
                    while (want >> v) {
                        printed.push_back(v);
                    }
                    corpus_ok = corpus_ok && got.has_value() && *got == printed;
                    ++checked;
                } else if (line.rfind("q:", 0) == 0 && arrow != std::string::npos) {
                    const auto sp = line.find(" s: ");
                    auto got = data::run_stack_program(line.substr(sp + 4, arrow - sp - 4));
                    corpus_ok = corpus_ok && got.has_value() && got->size() == 1 &&
                                (*got)[0] == std::stoll(line.substr(arrow + 4));
                    ++checked;
                } else if (const auto aw = line.rfind(" answer ");
                           aw != std::string::npos) {
                    const long long answer = std::stoll(line.substr(aw + 8));
                    const auto eq = line.rfind('=', aw);
                    const auto start = line.rfind(' ', eq);
                    auto val =
                        data::eval_arithmetic(line.substr(start + 1, eq - start - 1));
                    corpus_ok = corpus_ok && val.has_value() && *val == answer;
                    ++checked;
                }
            }
            corpus_ok = corpus_ok && checked > 0;
        }
    }

    const bool ok = roundtrip_ok && csv_ok && corpus_ok;
    std::ostringstream os;
    os << "checkpoint roundtrip " << (roundtrip_ok ? "byte-exact" : "DIFFERS")
       << ", pipeline CSV " << (csv_ok ? "reproducible" : "DIFFERS") << ", corpus re-eval "
       << (corpus_ok ? "clean" : "MISMATCH");
    report(10, ok, os.str(), now_s() - t0);
}

}  // namespace

int main() {
    const auto tmp = std::filesystem::temp_directory_path() / "mergelab_acceptance";
    std::filesystem::remove_all(tmp);
    std::filesystem::create_directories(tmp);

    criterion_1_numerics();
    criterion_2_cka();
    criterion_3_interpolation();
    criterion_4_moe();
    criterion_5_freezing(tmp);

    auto res = run_studies(tmp);
    criterion_6_divergence(res);
    criterion_7_ladder(res);
    criterion_8_layers(res);
    criterion_9_baseline(res);

    criterion_10_infrastructure(tmp);

    std::printf("%d/10 criteria passed\n", 10 - g_failures);
    return g_failures;
}
