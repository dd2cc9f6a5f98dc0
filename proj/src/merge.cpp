#include "mergelab/merge.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace mergelab::merge {

using namespace mergelab::nn;
using model::TransformerModel;

std::string merge_method_name(MergeMethod m) {
    switch (m) {
        case MergeMethod::Lerp: return "lerp";
        case MergeMethod::Slerp: return "slerp";
        case MergeMethod::ActivationInterp: return "activation_interp";
        case MergeMethod::SingleRouter: return "single_router";
        case MergeMethod::FullRouter: return "full_router";
        case MergeMethod::FullRouterBase: return "full_router_base";
        case MergeMethod::MultiLayer: return "multi_layer";
    }
    throw ContractError("unknown merge method");
}

MergeMethod merge_method_from_name(const std::string& name) {
    for (MergeMethod m : {MergeMethod::Lerp, MergeMethod::Slerp, MergeMethod::ActivationInterp,
                          MergeMethod::SingleRouter, MergeMethod::FullRouter,
                          MergeMethod::FullRouterBase, MergeMethod::MultiLayer}) {
        if (merge_method_name(m) == name) {
            return m;
        }
    }
    throw ContractError("unknown merge method name: " + name);
}

bool is_static_method(MergeMethod m) {
    return m == MergeMethod::Lerp || m == MergeMethod::Slerp ||
           m == MergeMethod::ActivationInterp;
}

void MergeSpec::validate() const {
    if (is_static_method(method) && (alpha < 0.0 || alpha > 1.0)) {
        throw ContractError("merge spec: alpha must lie in [0,1]");
    }
    if (method == MergeMethod::MultiLayer && (k < 1 || k > 3)) {
        throw ContractError("merge spec: k must lie in {1,2,3}");
    }
}

std::string MergeSpec::label() const {
    std::string s = merge_method_name(method);
    if (method == MergeMethod::MultiLayer) {
        s += "_" + std::to_string(k);
    }
    if (mlp2_router && !is_static_method(method)) {
        s += "_mlp2";
    }
    return s;
}

// ---------------------------------------------------------------------------
// interpolation
// ---------------------------------------------------------------------------

std::vector<double> lerp(const std::vector<double>& a, const std::vector<double>& b, double alpha) {
    if (a.size() != b.size()) {
        throw DimensionError("lerp: length mismatch " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    }
    std::vector<double> out(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        out[i] = alpha * a[i] + (1.0 - alpha) * b[i];
    }
    return out;
}

std::vector<double> slerp(const std::vector<double>& v0, const std::vector<double>& v1, double t) {
    if (v0.size() != v1.size()) {
        throw DimensionError("slerp: length mismatch");
    }
    double n0 = 0.0;
    double n1 = 0.0;
    double dot = 0.0;
    for (size_t i = 0; i < v0.size(); ++i) {
        n0 += v0[i] * v0[i];
        n1 += v1[i] * v1[i];
        dot += v0[i] * v1[i];
    }
    n0 = std::sqrt(n0);
    n1 = std::sqrt(n1);
    if (n0 == 0.0 || n1 == 0.0) {
        throw ContractError("slerp: zero-norm input");
    }
    const double cos_theta = dot / (n0 * n1);
    if (std::abs(cos_theta) > kSlerpColinearThreshold) {
        // nearly colinear: arc degenerates, interpolate linearly
        return lerp(v0, v1, 1.0 - t);
    }
    const double theta = std::acos(std::clamp(cos_theta, -1.0, 1.0));
    const double s = std::sin(theta);
    const double c0 = std::sin((1.0 - t) * theta) / s;
    const double c1 = std::sin(t * theta) / s;
    std::vector<double> out(v0.size());
    for (size_t i = 0; i < v0.size(); ++i) {
        out[i] = c0 * v0[i] + c1 * v1[i];
    }
    return out;
}

std::vector<double> flatten_params(const TransformerModel& m) {
    std::vector<double> flat;
    for (const auto& [name, t] : m.named_params()) {
        flat.insert(flat.end(), t->data.begin(), t->data.end());
    }
    return flat;
}

void unflatten_params(TransformerModel& m, const std::vector<double>& flat) {
    size_t off = 0;
    for (const auto& [name, t] : m.named_params()) {
        if (off + t->data.size() > flat.size()) {
            throw DimensionError("unflatten_params: flat vector too short");
        }
        std::copy(flat.begin() + off, flat.begin() + off + t->data.size(), t->data.begin());
        off += t->data.size();
    }
    if (off != flat.size()) {
        throw DimensionError("unflatten_params: flat vector length mismatch");
    }
}

// ---------------------------------------------------------------------------
// routers
// ---------------------------------------------------------------------------

std::vector<TensorRef> Router::params() const {
    if (kind == RouterKind::Linear) {
        return {w};
    }
    return {w1, w2};
}

int Router::param_count() const {
    int n = 0;
    for (const auto& p : params()) {
        n += p->size();
    }
    return n;
}

Router make_router(RouterKind kind, std::vector<ExpertRef> roster, int d_model) {
    std::set<std::pair<int, int>> seen;
    for (const auto& e : roster) {
        if (!seen.insert({e.model_idx, e.layer}).second) {
            throw ContractError("router roster entries must be unique");
        }
    }
    Router r;
    r.kind = kind;
    r.roster = std::move(roster);
    const int n = r.n_experts();
    // zero init: exact uniform mixing at step 0
    if (kind == RouterKind::Linear) {
        r.w = zeros({n, d_model});
    } else {
        r.w1 = zeros({d_model, d_model});
        r.w2 = zeros({n, d_model});
    }
    return r;
}

TensorRef route(Tape& tape, const Router& router, const TensorRef& x) {
    if (x->cols() != (router.kind == RouterKind::Linear ? router.w->cols() : router.w1->cols())) {
        throw DimensionError("route: hidden width mismatch");
    }
    TensorRef logits;
    if (router.kind == RouterKind::Linear) {
        logits = matmul_nt(tape, x, router.w);
    } else {
        auto h = gelu(tape, matmul_nt(tape, x, router.w1));
        logits = matmul_nt(tape, h, router.w2);
    }
    return softmax_rows(tape, logits);
}

TensorRef moe_forward(Tape& tape, const std::vector<TensorRef>& expert_outputs,
                      const TensorRef& weights) {
    return mix_rows(tape, expert_outputs, weights);
}

// ---------------------------------------------------------------------------
// merged model
// ---------------------------------------------------------------------------

MergedModel::MergedModel(MergeSpec spec, std::vector<ModelRef> specialists, ModelRef base)
    : spec_(std::move(spec)), specialists_(std::move(specialists)), base_(std::move(base)) {
    spec_.validate();
    if (specialists_.size() < 2) {
        throw ContractError("merged model needs at least 2 specialists");
    }
    const uint64_t base_hash = base_->trunk_hash();
    for (const auto& m : specialists_) {
        if (m->config() != base_->config()) {
            throw IncompatibleModelsError("merged model: config mismatch with base");
        }
        if (m->trunk_hash() != base_hash) {
            throw IncompatibleModelsError(
                "merged model: specialist attention stack differs from base");
        }
    }
    const int n_layers = base_->config().n_layers;
    const int d_model = base_->config().d_model;
    const RouterKind kind = spec_.mlp2_router ? RouterKind::Mlp2 : RouterKind::Linear;

    auto corresponding_roster = [&](bool include_base) {
        std::vector<ExpertRef> roster;
        for (int m = 0; m < static_cast<int>(specialists_.size()); ++m) {
            roster.push_back({m, ExpertRef::kCurrentLayer});
        }
        if (include_base) {
            roster.push_back({-1, ExpertRef::kCurrentLayer});
        }
        return roster;
    };

    switch (spec_.method) {
        case MergeMethod::Lerp:
        case MergeMethod::Slerp: {
            if (specialists_.size() != 2) {
                throw ContractError("weight interpolation requires exactly 2 models");
            }
            interpolated_ = specialists_[0]->clone();
            const auto fa = flatten_params(*specialists_[0]);
            const auto fb = flatten_params(*specialists_[1]);
            const auto merged = spec_.method == MergeMethod::Lerp
                                    ? lerp(fa, fb, spec_.alpha)
                                    : slerp(fa, fb, spec_.alpha);
            unflatten_params(*interpolated_, merged);
            break;
        }
        case MergeMethod::ActivationInterp:
            if (specialists_.size() != 2) {
                throw ContractError("activation interpolation requires exactly 2 models");
            }
            break;
        case MergeMethod::SingleRouter:
            routers_.push_back(make_router(kind, corresponding_roster(false), d_model));
            break;
        case MergeMethod::FullRouter:
        case MergeMethod::FullRouterBase:
            for (int l = 0; l < n_layers; ++l) {
                routers_.push_back(make_router(
                    kind, corresponding_roster(spec_.method == MergeMethod::FullRouterBase),
                    d_model));
            }
            break;
        case MergeMethod::MultiLayer:
            for (int l = 0; l < n_layers; ++l) {
                std::vector<ExpertRef> roster;
                // depths clamp at the top of the network, no wraparound
                for (int j = l; j < std::min(l + spec_.k, n_layers); ++j) {
                    for (int m = 0; m < static_cast<int>(specialists_.size()); ++m) {
                        roster.push_back({m, j});
                    }
                }
                routers_.push_back(make_router(kind, std::move(roster), d_model));
            }
            break;
    }
    set_router_training(false);
}

std::vector<ExpertRef> MergedModel::roster_at(int layer) const {
    std::vector<ExpertRef> out;
    if (spec_.method == MergeMethod::ActivationInterp) {
        // routerless: the two specialists' corresponding experts, in order
        for (int m = 0; m < static_cast<int>(specialists_.size()); ++m) {
            out.push_back({m, ExpertRef::kCurrentLayer});
        }
    } else {
        const Router& r = spec_.method == MergeMethod::SingleRouter ? routers_[0]
                                                                    : routers_.at(layer);
        out = r.roster;
    }
    for (auto& e : out) {
        if (e.layer == ExpertRef::kCurrentLayer) {
            e.layer = layer;
        }
    }
    return out;
}

const model::MlpExpert& MergedModel::expert_for(const ExpertRef& ref, int layer) const {
    const int at = ref.layer == ExpertRef::kCurrentLayer ? layer : ref.layer;
    const TransformerModel& m =
        ref.model_idx < 0 ? *base_ : *specialists_.at(ref.model_idx);
    return m.layers().at(at).mlp;
}

TensorRef MergedModel::forward(Tape& tape, std::span<const int> tokens,
                               ActivationTrace* trace, std::span<const uint8_t> mask,
                               std::vector<TensorRef>* routing_weights) const {
    if (interpolated_) {
        return interpolated_->forward(tape, tokens, trace, mask);
    }
    const auto& cfg = base_->config();
    const int t_count = static_cast<int>(tokens.size());
    if (t_count > cfg.context_length) {
        throw ContractError("forward: sequence exceeds context length");
    }
    if (trace && trace->layer_rows.empty()) {
        trace->init(cfg.n_layers, cfg.d_model);
    }
    auto x = add(tape, embedding_rows(tape, base_->token_embedding(), tokens),
                 slice_rows(tape, base_->position_embedding(), 0, t_count));
    TensorRef single_router_weights;
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& lp = base_->layers()[l];
        auto h1 = layernorm(tape, x, lp.ln1_gain, lp.ln1_bias, model::kLayerNormEps);
        x = add(tape, x, attention_sublayer(tape, lp, cfg, h1));
        // x is now the post-attention residual stream: the router input
        TensorRef weights;
        if (spec_.method == MergeMethod::ActivationInterp) {
            auto w = make_tensor({t_count, 2});
            for (int t = 0; t < t_count; ++t) {
                w->at(t, 0) = spec_.alpha;
                w->at(t, 1) = 1.0 - spec_.alpha;
            }
            weights = w;
        } else if (spec_.method == MergeMethod::SingleRouter) {
            if (l == 0) {
                single_router_weights = route(tape, routers_[0], x);
            }
            weights = single_router_weights;
        } else {
            weights = route(tape, routers_[l], x);
        }
        if (routing_weights) {
            routing_weights->push_back(weights);
        }
        auto h2 = layernorm(tape, x, lp.ln2_gain, lp.ln2_bias, model::kLayerNormEps);
        std::vector<TensorRef> outs;
        for (const auto& ref : roster_at(l)) {
            outs.push_back(mlp_forward(tape, expert_for(ref, l), h2));
        }
        auto mlp_out = moe_forward(tape, outs, weights);
        if (trace) {
            trace->append(l, *mlp_out, mask);
        }
        x = add(tape, x, mlp_out);
    }
    auto xf = layernorm(tape, x, base_->final_ln_gain(), base_->final_ln_bias(),
                        model::kLayerNormEps);
    return matmul_nt(tape, xf, base_->token_embedding());
}

std::vector<TensorRef> MergedModel::router_params() const {
    std::vector<TensorRef> out;
    for (const auto& r : routers_) {
        for (const auto& p : r.params()) {
            out.push_back(p);
        }
    }
    return out;
}

int MergedModel::trainable_param_count() const {
    int n = 0;
    for (const auto& r : routers_) {
        n += r.param_count();
    }
    return n;
}

void MergedModel::set_router_training(bool on) {
    for (const auto& m : specialists_) {
        m->set_requires_grad(model::ParamPolicy::RouterOnly);  // freezes everything
    }
    base_->set_requires_grad(model::ParamPolicy::RouterOnly);
    if (interpolated_) {
        interpolated_->set_requires_grad(model::ParamPolicy::RouterOnly);
    }
    for (auto& p : router_params()) {
        p->requires_grad = on;
    }
}

uint64_t MergedModel::expert_and_trunk_hash() const {
    std::vector<TensorRef> all;
    auto collect = [&all](const TransformerModel& m) {
        for (const auto& [name, t] : m.named_params()) {
            all.push_back(t);
        }
    };
    collect(*base_);
    for (const auto& m : specialists_) {
        collect(*m);
    }
    return model::hash_tensors(all);
}

MergedRef build_merged(const MergeSpec& spec, std::vector<ModelRef> specialists, ModelRef base) {
    return std::make_shared<MergedModel>(spec, std::move(specialists), std::move(base));
}

// ---------------------------------------------------------------------------
// router training
// ---------------------------------------------------------------------------

namespace {

double eval_merged_ce(const MergedModel& merged, const data::Corpus& corpus,
                      const RouterTrainConfig& cfg) {
    data::BatchStream stream(corpus, cfg.batch_size, merged.config().context_length,
                             cfg.seed, /*validation=*/true);
    Tape tape;
    tape.set_recording(false);
    double total = 0.0;
    int count = 0;
    for (int i = 0; i < cfg.eval_batches; ++i) {
        const data::Batch batch = stream.next();
        for (int b = 0; b < batch.batch_size; ++b) {
            auto logits = merged.forward(tape, batch.sequence(b));
            auto loss = cross_entropy(tape, logits, batch.sequence_targets(b));
            total += loss->data[0];
            ++count;
        }
    }
    return total / count;
}

}  // namespace

std::vector<TrainPoint> train_router(MergedModel& merged, const data::Corpus& adaptation,
                                     const RouterTrainConfig& cfg) {
    if (is_static_method(merged.spec().method)) {
        throw ContractError("train_router: method has no router");
    }
    merged.set_router_training(true);
    const uint64_t frozen_before = merged.expert_and_trunk_hash();

    Adam opt(merged.router_params(), cfg.adam);
    data::BatchStream stream(adaptation, cfg.batch_size, merged.config().context_length,
                             cfg.seed, /*validation=*/false);
    std::vector<TrainPoint> curve;
    curve.push_back({0, eval_merged_ce(merged, adaptation, cfg)});
    for (int step = 1; step <= cfg.steps; ++step) {
        const data::Batch batch = stream.next();
        Tape tape;
        std::vector<TensorRef> losses;
        for (int b = 0; b < batch.batch_size; ++b) {
            auto logits = merged.forward(tape, batch.sequence(b));
            losses.push_back(cross_entropy(tape, logits, batch.sequence_targets(b)));
        }
        auto loss = mean_of(tape, losses);
        if (!std::isfinite(loss->data[0])) {
            throw ContractError("train_router: loss diverged at step " + std::to_string(step));
        }
        opt.zero_grad();
        backward(loss, tape);
        opt.step();
        if (step % cfg.eval_interval == 0 || step == cfg.steps) {
            curve.push_back({step, eval_merged_ce(merged, adaptation, cfg)});
        }
    }
    merged.set_router_training(false);
    if (merged.expert_and_trunk_hash() != frozen_before) {
        throw ContractError("train_router: frozen tensors changed");
    }
    return curve;
}

}  // namespace mergelab::merge
