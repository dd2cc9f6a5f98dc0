#include "mergelab/model.hpp"

#include <cmath>
#include <cstring>

namespace mergelab::model {

using namespace mergelab::nn;

void ModelConfig::validate() const {
    if (n_layers <= 0 || n_heads <= 0 || d_model <= 0 || d_mlp <= 0 || vocab_size <= 0) {
        throw ContractError("model config: all extents must be positive");
    }
    if (d_model % n_heads != 0) {
        throw ContractError("model config: d_model must be divisible by n_heads");
    }
    if (context_length < 2) {
        throw ContractError("model config: context_length must be >= 2");
    }
}

void ActivationTrace::init(int n_layers, int d) {
    d_model = d;
    rows = 0;
    layer_rows.assign(n_layers, {});
}

void ActivationTrace::append(int layer, const Tensor& mlp_out, std::span<const uint8_t> mask) {
    const int t_count = mlp_out.rows();
    const int d = mlp_out.cols();
    auto& dst = layer_rows.at(layer);
    int added = 0;
    for (int t = 0; t < t_count; ++t) {
        if (!mask.empty() && !mask[t]) {
            continue;
        }
        const double* src = mlp_out.data.data() + static_cast<size_t>(t) * d;
        dst.insert(dst.end(), src, src + d);
        ++added;
    }
    if (layer == 0) {
        rows += added;
    }
}

TransformerModel::TransformerModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const double init_std = 0.02;
    // residual projections scaled down with depth, GPT-2 style
    const double resid_std = init_std / std::sqrt(2.0 * cfg_.n_layers);

    tok_emb_ = gaussian({cfg_.vocab_size, cfg_.d_model}, rng, init_std, true);
    pos_emb_ = gaussian({cfg_.context_length, cfg_.d_model}, rng, init_std, true);
    for (int l = 0; l < cfg_.n_layers; ++l) {
        LayerParams lp;
        lp.ln1_gain = ones({cfg_.d_model});
        lp.ln1_bias = zeros({cfg_.d_model});
        lp.wq = gaussian({cfg_.d_model, cfg_.d_model}, rng, init_std, true);
        lp.bq = zeros({cfg_.d_model}, true);
        lp.wk = gaussian({cfg_.d_model, cfg_.d_model}, rng, init_std, true);
        lp.bk = zeros({cfg_.d_model}, true);
        lp.wv = gaussian({cfg_.d_model, cfg_.d_model}, rng, init_std, true);
        lp.bv = zeros({cfg_.d_model}, true);
        lp.wo = gaussian({cfg_.d_model, cfg_.d_model}, rng, resid_std, true);
        lp.bo = zeros({cfg_.d_model}, true);
        lp.ln2_gain = ones({cfg_.d_model});
        lp.ln2_bias = zeros({cfg_.d_model});
        lp.mlp.w_in = gaussian({cfg_.d_model, cfg_.d_mlp}, rng, init_std, true);
        lp.mlp.b_in = zeros({cfg_.d_mlp}, true);
        lp.mlp.w_out = gaussian({cfg_.d_mlp, cfg_.d_model}, rng, resid_std, true);
        lp.mlp.b_out = zeros({cfg_.d_model}, true);
        layers_.push_back(std::move(lp));
    }
    lnf_gain_ = ones({cfg_.d_model});
    lnf_bias_ = zeros({cfg_.d_model});
    set_requires_grad(ParamPolicy::All);
}

std::vector<std::pair<std::string, TensorRef>> TransformerModel::named_params() const {
    std::vector<std::pair<std::string, TensorRef>> out;
    out.emplace_back("tok_emb", tok_emb_);
    out.emplace_back("pos_emb", pos_emb_);
    for (size_t l = 0; l < layers_.size(); ++l) {
        const auto& lp = layers_[l];
        const std::string p = "layer" + std::to_string(l) + ".";
        out.emplace_back(p + "ln1.gain", lp.ln1_gain);
        out.emplace_back(p + "ln1.bias", lp.ln1_bias);
        out.emplace_back(p + "attn.wq", lp.wq);
        out.emplace_back(p + "attn.bq", lp.bq);
        out.emplace_back(p + "attn.wk", lp.wk);
        out.emplace_back(p + "attn.bk", lp.bk);
        out.emplace_back(p + "attn.wv", lp.wv);
        out.emplace_back(p + "attn.bv", lp.bv);
        out.emplace_back(p + "attn.wo", lp.wo);
        out.emplace_back(p + "attn.bo", lp.bo);
        out.emplace_back(p + "ln2.gain", lp.ln2_gain);
        out.emplace_back(p + "ln2.bias", lp.ln2_bias);
        out.emplace_back(p + "mlp.w_in", lp.mlp.w_in);
        out.emplace_back(p + "mlp.b_in", lp.mlp.b_in);
        out.emplace_back(p + "mlp.w_out", lp.mlp.w_out);
        out.emplace_back(p + "mlp.b_out", lp.mlp.b_out);
    }
    out.emplace_back("lnf.gain", lnf_gain_);
    out.emplace_back("lnf.bias", lnf_bias_);
    return out;
}

std::vector<TensorRef> TransformerModel::mlp_params() const {
    std::vector<TensorRef> out;
    for (const auto& lp : layers_) {
        out.push_back(lp.mlp.w_in);
        out.push_back(lp.mlp.b_in);
        out.push_back(lp.mlp.w_out);
        out.push_back(lp.mlp.b_out);
    }
    if (cfg_.train_layernorm) {
        for (const auto& lp : layers_) {
            out.push_back(lp.ln2_gain);
            out.push_back(lp.ln2_bias);
        }
    }
    return out;
}

std::vector<TensorRef> TransformerModel::trunk_params() const {
    std::vector<TensorRef> mlp = mlp_params();
    std::vector<TensorRef> out;
    for (const auto& [name, t] : named_params()) {
        bool in_mlp = false;
        for (const auto& m : mlp) {
            if (m == t) {
                in_mlp = true;
                break;
            }
        }
        if (!in_mlp) {
            out.push_back(t);
        }
    }
    return out;
}

TensorRef attention_sublayer(Tape& tape, const LayerParams& layer, const ModelConfig& cfg,
                             const TensorRef& h) {
    const int head_dim = cfg.d_model / cfg.n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    auto q = add_rowvec(tape, matmul(tape, h, layer.wq), layer.bq);
    auto k = add_rowvec(tape, matmul(tape, h, layer.wk), layer.bk);
    auto v = add_rowvec(tape, matmul(tape, h, layer.wv), layer.bv);
    std::vector<TensorRef> heads;
    heads.reserve(cfg.n_heads);
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
        auto qh = slice_cols(tape, q, hd * head_dim, head_dim);
        auto kh = slice_cols(tape, k, hd * head_dim, head_dim);
        auto vh = slice_cols(tape, v, hd * head_dim, head_dim);
        auto scores = scale(tape, matmul_nt(tape, qh, kh), att_scale);
        auto probs = causal_softmax(tape, scores);
        heads.push_back(matmul(tape, probs, vh));
    }
    auto ctx = concat_cols(tape, heads);
    return add_rowvec(tape, matmul(tape, ctx, layer.wo), layer.bo);
}

TensorRef mlp_forward(Tape& tape, const MlpExpert& mlp, const TensorRef& h) {
    auto a = gelu(tape, add_rowvec(tape, matmul(tape, h, mlp.w_in), mlp.b_in));
    return add_rowvec(tape, matmul(tape, a, mlp.w_out), mlp.b_out);
}

TensorRef TransformerModel::forward(Tape& tape, std::span<const int> tokens,
                                    ActivationTrace* trace,
                                    std::span<const uint8_t> mask) const {
    const int t_count = static_cast<int>(tokens.size());
    if (t_count > cfg_.context_length) {
        throw ContractError("forward: sequence length " + std::to_string(t_count) +
                            " exceeds context " + std::to_string(cfg_.context_length));
    }
    if (trace && trace->layer_rows.empty()) {
        trace->init(cfg_.n_layers, cfg_.d_model);
    }
    auto x = add(tape, embedding_rows(tape, tok_emb_, tokens),
                 slice_rows(tape, pos_emb_, 0, t_count));
    for (int l = 0; l < cfg_.n_layers; ++l) {
        const auto& lp = layers_[l];
        auto h1 = layernorm(tape, x, lp.ln1_gain, lp.ln1_bias, kLayerNormEps);
        x = add(tape, x, attention_sublayer(tape, lp, cfg_, h1));
        auto h2 = layernorm(tape, x, lp.ln2_gain, lp.ln2_bias, kLayerNormEps);
        auto mlp_out = mlp_forward(tape, lp.mlp, h2);
        if (trace) {
            trace->append(l, *mlp_out, mask);
        }
        x = add(tape, x, mlp_out);
    }
    auto xf = layernorm(tape, x, lnf_gain_, lnf_bias_, kLayerNormEps);
    return matmul_nt(tape, xf, tok_emb_);
}

void TransformerModel::set_requires_grad(ParamPolicy policy) {
    auto [trainable, frozen] = partition_params(policy);
    for (auto& t : trainable) {
        t->requires_grad = true;
    }
    for (auto& t : frozen) {
        t->requires_grad = false;
    }
}

std::pair<std::vector<TensorRef>, std::vector<TensorRef>> TransformerModel::partition_params(
    ParamPolicy policy) const {
    std::vector<TensorRef> all;
    for (const auto& [name, t] : named_params()) {
        all.push_back(t);
    }
    switch (policy) {
        case ParamPolicy::All:
            return {all, {}};
        case ParamPolicy::RouterOnly:
            // a plain model owns no router tensors
            return {{}, all};
        case ParamPolicy::MlpOnly: {
            return {mlp_params(), trunk_params()};
        }
    }
    throw ContractError("partition_params: unknown policy");
}

uint64_t hash_tensors(const std::vector<TensorRef>& tensors) {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    auto mix = [&h](const void* p, size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& t : tensors) {
        for (int e : t->shape) {
            mix(&e, sizeof(e));
        }
        mix(t->data.data(), t->data.size() * sizeof(double));
    }
    return h;
}

uint64_t TransformerModel::trunk_hash() const {
    return hash_tensors(trunk_params());
}

uint64_t TransformerModel::params_hash() const {
    std::vector<TensorRef> all;
    for (const auto& [name, t] : named_params()) {
        all.push_back(t);
    }
    return hash_tensors(all);
}

std::shared_ptr<TransformerModel> TransformerModel::clone() const {
    auto copy = std::make_shared<TransformerModel>(cfg_);
    auto src = named_params();
    auto dst = copy->named_params();
    for (size_t i = 0; i < src.size(); ++i) {
        dst[i].second->data = src[i].second->data;
        dst[i].second->requires_grad = src[i].second->requires_grad;
    }
    return copy;
}

}  // namespace mergelab::model
