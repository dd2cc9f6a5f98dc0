#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mergelab/tensor.hpp"

namespace mergelab::model {

using nn::Tape;
using nn::TensorRef;

struct ModelConfig {
    int n_layers = 4;
    int n_heads = 4;
    int d_model = 128;
    int d_mlp = 512;
    int vocab_size = 0;  // tokenizer-determined
    int context_length = 128;
    uint64_t seed = 0;
    bool train_layernorm = false;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct MlpExpert {
    TensorRef w_in;   // d_model x d_mlp
    TensorRef b_in;   // d_mlp
    TensorRef w_out;  // d_mlp x d_model
    TensorRef b_out;  // d_model
};

struct LayerParams {
    TensorRef ln1_gain, ln1_bias;
    TensorRef wq, bq, wk, bk, wv, bv, wo, bo;
    TensorRef ln2_gain, ln2_bias;
    MlpExpert mlp;
};

enum class ParamPolicy { MlpOnly, RouterOnly, All };

// Per-layer MLP sublayer outputs (pre-residual-add), rows = unmasked token
// positions accumulated across sequences.
struct ActivationTrace {
    int d_model = 0;
    std::vector<std::vector<double>> layer_rows;  // [n_layers][rows * d_model]
    int rows = 0;

    void init(int n_layers, int d);
    void append(int layer, const nn::Tensor& mlp_out, std::span<const uint8_t> mask);
};

// Pre-LN decoder-only transformer with tied embeddings. MLP sublayers are the
// routable experts; everything else is the trunk.
class TransformerModel {
public:
    explicit TransformerModel(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    std::vector<LayerParams>& layers() { return layers_; }
    const std::vector<LayerParams>& layers() const { return layers_; }
    const TensorRef& token_embedding() const { return tok_emb_; }
    const TensorRef& position_embedding() const { return pos_emb_; }
    const TensorRef& final_ln_gain() const { return lnf_gain_; }
    const TensorRef& final_ln_bias() const { return lnf_bias_; }

    // stable name -> tensor ordering, used by checkpoints and flattening
    std::vector<std::pair<std::string, TensorRef>> named_params() const;
    std::vector<TensorRef> mlp_params() const;
    std::vector<TensorRef> trunk_params() const;  // everything that is not an MlpExpert

    // logits [T x V] for one sequence; trace, when non-null, collects each
    // layer's MLP output at positions where mask is nonzero
    TensorRef forward(Tape& tape, std::span<const int> tokens,
                      ActivationTrace* trace = nullptr,
                      std::span<const uint8_t> mask = {}) const;

    void set_requires_grad(ParamPolicy policy);
    std::pair<std::vector<TensorRef>, std::vector<TensorRef>> partition_params(
        ParamPolicy policy) const;

    // hash over all trunk tensor payloads; equal hashes <=> shared trunk
    uint64_t trunk_hash() const;
    uint64_t params_hash() const;

    std::shared_ptr<TransformerModel> clone() const;

private:
    ModelConfig cfg_;
    TensorRef tok_emb_;  // vocab x d_model, tied unembedding
    TensorRef pos_emb_;  // context x d_model
    std::vector<LayerParams> layers_;
    TensorRef lnf_gain_, lnf_bias_;
};

using ModelRef = std::shared_ptr<TransformerModel>;

constexpr double kLayerNormEps = 1e-5;

// attention sublayer output (pre-residual) given ln1-normalized input
TensorRef attention_sublayer(Tape& tape, const LayerParams& layer, const ModelConfig& cfg,
                             const TensorRef& h);
// expert MLP output (pre-residual) given ln2-normalized input
TensorRef mlp_forward(Tape& tape, const MlpExpert& mlp, const TensorRef& h);

uint64_t hash_tensors(const std::vector<TensorRef>& tensors);

}  // namespace mergelab::model
