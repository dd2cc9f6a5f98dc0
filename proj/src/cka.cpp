#include "mergelab/cka.hpp"

#include <cmath>
#include <sstream>

#include "mergelab/tensor.hpp"

namespace mergelab::analysis {

using nn::ContractError;
using nn::DimensionError;

std::vector<double> gram(const ActivationMatrix& x) {
    if (x.n < 2) {
        throw ContractError("gram: need at least 2 rows");
    }
    std::vector<double> k(static_cast<size_t>(x.n) * x.n);
    nn::gemm_nt(x.x.data(), x.x.data(), k.data(), x.n, x.d, x.n, false);
    return k;
}

std::vector<double> center(const std::vector<double>& k, int n) {
    if (k.size() != static_cast<size_t>(n) * n) {
        throw DimensionError("center: matrix must be square n x n");
    }
    std::vector<double> row_mean(n, 0.0);
    std::vector<double> col_mean(n, 0.0);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double v = k[static_cast<size_t>(i) * n + j];
            row_mean[i] += v;
            col_mean[j] += v;
            total += v;
        }
    }
    for (int i = 0; i < n; ++i) {
        row_mean[i] /= n;
        col_mean[i] /= n;
    }
    total /= static_cast<double>(n) * n;
    std::vector<double> out(k.size());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            out[static_cast<size_t>(i) * n + j] =
                k[static_cast<size_t>(i) * n + j] - row_mean[i] - col_mean[j] + total;
        }
    }
    return out;
}

double hsic(const std::vector<double>& k, const std::vector<double>& l, int n) {
    if (n < 2) {
        throw ContractError("hsic: need n >= 2");
    }
    if (k.size() != l.size() || k.size() != static_cast<size_t>(n) * n) {
        throw DimensionError("hsic: matrix sizes must match n x n");
    }
    const std::vector<double> kc = center(k, n);
    const std::vector<double> lc = center(l, n);
    // tr(K̄ L̄) = sum_ij K̄_ij L̄_ji = sum_ij K̄_ij L̄_ij for symmetric inputs
    double trace = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            trace += kc[static_cast<size_t>(i) * n + j] * lc[static_cast<size_t>(j) * n + i];
        }
    }
    const double denom = static_cast<double>(n - 1) * (n - 1);
    return trace / denom;
}

CkaResult cka(const ActivationMatrix& x, const ActivationMatrix& y) {
    if (x.n != y.n) {
        throw DimensionError("cka: row counts differ (" + std::to_string(x.n) + " vs " +
                             std::to_string(y.n) + ")");
    }
    const auto k = gram(x);
    const auto l = gram(y);
    const double kk = hsic(k, k, x.n);
    const double ll = hsic(l, l, x.n);
    const double eps = 1e-14;
    if (kk <= eps || ll <= eps) {
        throw DegenerateSimilarityError(
            "cka: input has zero centered variance; similarity undefined");
    }
    CkaResult result;
    result.value = hsic(k, l, x.n) / std::sqrt(kk * ll);
    result.n = x.n;
    result.lhs = x.tag;
    result.rhs = y.tag;
    return result;
}

LayerSimilarityMatrix layer_similarity(const std::vector<ActivationMatrix>& traces_a,
                                       const std::vector<ActivationMatrix>& traces_b,
                                       SimilarityMode mode, const std::string& dataset_id) {
    LayerSimilarityMatrix m;
    m.rows = static_cast<int>(traces_a.size());
    m.cols = static_cast<int>(traces_b.size());
    m.mode = mode;
    m.dataset_id = dataset_id;
    m.cells.reserve(static_cast<size_t>(m.rows) * m.cols);
    for (const auto& ta : traces_a) {
        for (const auto& tb : traces_b) {
            m.cells.push_back(cka(ta, tb));
        }
    }
    return m;
}

std::string LayerSimilarityMatrix::to_csv() const {
    std::ostringstream os;
    os << "layer";
    for (int j = 0; j < cols; ++j) {
        os << "," << j;
    }
    os << "\n";
    for (int i = 0; i < rows; ++i) {
        os << i;
        for (int j = 0; j < cols; ++j) {
            os << "," << value(i, j);
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace mergelab::analysis
