#pragma once

#include <cstdint>
#include <vector>

#include "mergelab/tensor.hpp"

namespace mergelab::nn {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Bias-corrected Adam with decoupled weight decay over a fixed parameter set.
class Adam {
public:
    Adam(std::vector<TensorRef> params, AdamConfig cfg);

    // applies one update from the gradients currently stored in the params
    void step();
    void zero_grad();

    int64_t step_count() const { return step_count_; }
    const AdamConfig& config() const { return cfg_; }

private:
    std::vector<TensorRef> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    AdamConfig cfg_;
    int64_t step_count_ = 0;
};

}  // namespace mergelab::nn
