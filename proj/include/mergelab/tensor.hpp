#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mergelab/rng.hpp"

namespace mergelab::nn {

struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major f64 tensor. Gradients accumulate additively; callers zero
// them explicitly between optimizer steps.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized lazily, same length as data when used
    bool requires_grad = false;

    Tensor() = default;
    Tensor(std::vector<int> shape_, bool requires_grad_ = false);

    int size() const { return static_cast<int>(data.size()); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    bool is_scalar() const { return data.size() == 1; }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

    void ensure_grad();
    void zero_grad();
    bool all_finite() const;
    std::string shape_str() const;
};

using TensorRef = std::shared_ptr<Tensor>;

TensorRef make_tensor(std::vector<int> shape, bool requires_grad = false);
TensorRef zeros(std::vector<int> shape, bool requires_grad = false);
TensorRef ones(std::vector<int> shape);
TensorRef full(std::vector<int> shape, double value);
TensorRef identity(int n);
TensorRef gaussian(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad = false);
TensorRef scalar(double value);

// Reverse-mode tape. Ops append backward closures in execution order;
// backward() replays them once, in reverse.
class Tape {
public:
    void record(std::function<void()> backward_fn) {
        if (recording_) {
            nodes_.push_back(std::move(backward_fn));
        }
    }
    void clear() { nodes_.clear(); }
    size_t size() const { return nodes_.size(); }

    bool recording() const { return recording_; }
    void set_recording(bool on) { recording_ = on; }

    void run_backward();

private:
    std::vector<std::function<void()>> nodes_;
    bool recording_ = true;
};

// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. The loss must be
// a scalar produced under this tape.
void backward(const TensorRef& loss, Tape& tape);

// ---------------------------------------------------------------------------
// primitives (all differentiable unless noted)
// ---------------------------------------------------------------------------

TensorRef add(Tape& tape, const TensorRef& a, const TensorRef& b);
TensorRef scale(Tape& tape, const TensorRef& a, double c);
// adds row vector b[c] to every row of a[r x c]
TensorRef add_rowvec(Tape& tape, const TensorRef& a, const TensorRef& b);
TensorRef mul(Tape& tape, const TensorRef& a, const TensorRef& b);

TensorRef matmul(Tape& tape, const TensorRef& a, const TensorRef& b);
// a[m x k] * b[n x k]^T -> [m x n]
TensorRef matmul_nt(Tape& tape, const TensorRef& a, const TensorRef& b);

TensorRef gelu(Tape& tape, const TensorRef& a);
TensorRef layernorm(Tape& tape, const TensorRef& x, const TensorRef& gain,
                    const TensorRef& bias, double eps);
TensorRef softmax_rows(Tape& tape, const TensorRef& x);
// softmax over each row i restricted to columns j <= i; columns j > i get 0
TensorRef causal_softmax(Tape& tape, const TensorRef& scores);

// mean over positions of -log softmax(logits)[target]
TensorRef cross_entropy(Tape& tape, const TensorRef& logits, std::span<const int> targets);

// rows of table indexed by ids -> [ids.size() x d]
TensorRef embedding_rows(Tape& tape, const TensorRef& table, std::span<const int> ids);
TensorRef slice_rows(Tape& tape, const TensorRef& a, int r0, int count);
TensorRef slice_cols(Tape& tape, const TensorRef& a, int c0, int count);
TensorRef concat_cols(Tape& tape, const std::vector<TensorRef>& parts);

// y[t,:] = sum_i weights[t,i] * outs[i][t,:]
TensorRef mix_rows(Tape& tape, const std::vector<TensorRef>& outs, const TensorRef& weights);

TensorRef sum(Tape& tape, const TensorRef& a);
TensorRef mean_of(Tape& tape, const std::vector<TensorRef>& scalars);

// ---------------------------------------------------------------------------
// raw gemm helpers on flat buffers (used by op backwards; not taped)
// ---------------------------------------------------------------------------

void gemm_nn(const double* a, const double* b, double* out, int m, int k, int n, bool accumulate);
void gemm_nt(const double* a, const double* b, double* out, int m, int k, int n, bool accumulate);
void gemm_tn(const double* a, const double* b, double* out, int m, int k, int n, bool accumulate);

}  // namespace mergelab::nn
