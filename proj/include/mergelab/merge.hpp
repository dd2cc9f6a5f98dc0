#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mergelab/adam.hpp"
#include "mergelab/data.hpp"
#include "mergelab/model.hpp"

namespace mergelab::merge {

using model::ActivationTrace;
using model::ModelRef;
using nn::Tape;
using nn::TensorRef;

struct IncompatibleModelsError : nn::ContractError {
    using nn::ContractError::ContractError;
};

enum class MergeMethod {
    Lerp,
    Slerp,
    ActivationInterp,
    SingleRouter,
    FullRouter,
    FullRouterBase,
    MultiLayer,
};

std::string merge_method_name(MergeMethod m);
MergeMethod merge_method_from_name(const std::string& name);
bool is_static_method(MergeMethod m);

struct MergeSpec {
    MergeMethod method = MergeMethod::FullRouter;
    double alpha = 0.5;      // static methods only
    int k = 1;               // multi_layer reach, in {1,2,3}
    bool mlp2_router = false;

    void validate() const;
    std::string label() const;
};

// ---------------------------------------------------------------------------
// weight-space interpolation over flattened parameter vectors
// ---------------------------------------------------------------------------

// alpha*a + (1-alpha)*b
std::vector<double> lerp(const std::vector<double>& a, const std::vector<double>& b, double alpha);
// spherical interpolation along the arc from v0 (t=0) to v1 (t=1); falls back
// to lerp when the normalized directions are nearly colinear
std::vector<double> slerp(const std::vector<double>& v0, const std::vector<double>& v1, double t);

constexpr double kSlerpColinearThreshold = 1.0 - 1e-7;

std::vector<double> flatten_params(const model::TransformerModel& m);
void unflatten_params(model::TransformerModel& m, const std::vector<double>& flat);

// ---------------------------------------------------------------------------
// routers
// ---------------------------------------------------------------------------

enum class RouterKind { Linear, Mlp2 };

// (model index into the specialist list, or -1 for the base model; layer index,
// or kCurrentLayer for "the layer this router sits at")
struct ExpertRef {
    int model_idx = 0;
    int layer = kCurrentLayer;
    static constexpr int kCurrentLayer = -1;
    bool operator==(const ExpertRef&) const = default;
};

struct Router {
    RouterKind kind = RouterKind::Linear;
    TensorRef w;        // linear: N x d_model
    TensorRef w1, w2;   // mlp2: d_hidden x d_model, N x d_hidden
    std::vector<ExpertRef> roster;

    int n_experts() const { return static_cast<int>(roster.size()); }
    std::vector<TensorRef> params() const;
    int param_count() const;
};

Router make_router(RouterKind kind, std::vector<ExpertRef> roster, int d_model);

// r = softmax(W x_t) per token row, or softmax(W2 gelu(W1 x_t)) for mlp2
TensorRef route(Tape& tape, const Router& router, const TensorRef& x);

// y_t = sum_i r_{t,i} E_i(x_t) over the dense roster
TensorRef moe_forward(Tape& tape, const std::vector<TensorRef>& expert_outputs,
                      const TensorRef& weights);

// ---------------------------------------------------------------------------
// merged model
// ---------------------------------------------------------------------------

// Composition of >= 2 specialists over a shared trunk. The trunk (embeddings,
// attention, layernorms) comes from the base; specialists contribute only
// their MLP experts.
class MergedModel {
public:
    MergedModel(MergeSpec spec, std::vector<ModelRef> specialists, ModelRef base);

    const MergeSpec& spec() const { return spec_; }
    const model::ModelConfig& config() const { return base_->config(); }
    std::vector<Router>& routers() { return routers_; }
    const std::vector<Router>& routers() const { return routers_; }

    TensorRef forward(Tape& tape, std::span<const int> tokens,
                      ActivationTrace* trace = nullptr,
                      std::span<const uint8_t> mask = {},
                      std::vector<TensorRef>* routing_weights = nullptr) const;

    std::vector<TensorRef> router_params() const;
    int trainable_param_count() const;
    void set_router_training(bool on);

    // concrete roster at a given layer (expands kCurrentLayer)
    std::vector<ExpertRef> roster_at(int layer) const;

    uint64_t expert_and_trunk_hash() const;

private:
    const model::MlpExpert& expert_for(const ExpertRef& ref, int layer) const;

    MergeSpec spec_;
    std::vector<ModelRef> specialists_;
    ModelRef base_;
    ModelRef interpolated_;  // lerp/slerp only
    std::vector<Router> routers_;
};

using MergedRef = std::shared_ptr<MergedModel>;

MergedRef build_merged(const MergeSpec& spec, std::vector<ModelRef> specialists, ModelRef base);

// ---------------------------------------------------------------------------
// router training
// ---------------------------------------------------------------------------

struct RouterTrainConfig {
    int steps = 300;
    int batch_size = 8;
    int eval_interval = 50;
    int eval_batches = 8;
    uint64_t seed = 0;
    nn::AdamConfig adam;
};

struct TrainPoint {
    int step = 0;
    double val_ce = 0.0;
};

// Trains only the router tensors on the adaptation corpus; expert and trunk
// tensors are bit-identical before and after (asserted by hash).
std::vector<TrainPoint> train_router(MergedModel& merged, const data::Corpus& adaptation,
                                     const RouterTrainConfig& cfg);

}  // namespace mergelab::merge
