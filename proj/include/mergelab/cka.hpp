#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mergelab::analysis {

struct DegenerateSimilarityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SourceTag {
    std::string model_id;
    int layer = -1;
    std::string dataset_id;
};

// n x d activation rows (token positions) from one layer of one model.
struct ActivationMatrix {
    int n = 0;
    int d = 0;
    std::vector<double> x;  // row-major n*d
    SourceTag tag;

    double at(int i, int j) const { return x[static_cast<size_t>(i) * d + j]; }
};

struct CkaResult {
    double value = 0.0;
    int n = 0;
    SourceTag lhs;
    SourceTag rhs;
};

enum class SimilarityMode { Intra, Inter };

struct LayerSimilarityMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<CkaResult> cells;  // row-major
    SimilarityMode mode = SimilarityMode::Inter;
    std::string dataset_id;

    const CkaResult& at(int i, int j) const { return cells[static_cast<size_t>(i) * cols + j]; }
    double value(int i, int j) const { return at(i, j).value; }
    std::string to_csv() const;
};

// K = X X^T (dot-product kernel)
std::vector<double> gram(const ActivationMatrix& x);

// K̄ = H K H with H = I - (1/n) 1 1^T
std::vector<double> center(const std::vector<double>& k, int n);

// tr(K̄ L̄) / (n-1)^2
double hsic(const std::vector<double>& k, const std::vector<double>& l, int n);

CkaResult cka(const ActivationMatrix& x, const ActivationMatrix& y);

// entry (i,j) = cka(traces_a[i], traces_b[j]); pass the same traces twice for
// an intra-model matrix
LayerSimilarityMatrix layer_similarity(const std::vector<ActivationMatrix>& traces_a,
                                       const std::vector<ActivationMatrix>& traces_b,
                                       SimilarityMode mode, const std::string& dataset_id);

}  // namespace mergelab::analysis
