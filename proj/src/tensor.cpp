#include "mergelab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mergelab::nn {

namespace {

size_t shape_product(const std::vector<int>& shape) {
    size_t n = 1;
    for (int e : shape) {
        if (e <= 0) {
            throw DimensionError("tensor extents must be positive");
        }
        n *= static_cast<size_t>(e);
    }
    return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() +
                             " vs " + b.shape_str());
    }
}

bool any_requires(const std::initializer_list<TensorRef>& ts) {
    return std::any_of(ts.begin(), ts.end(),
                       [](const TensorRef& t) { return t->requires_grad; });
}

}  // namespace

Tensor::Tensor(std::vector<int> shape_, bool requires_grad_)
    : shape(std::move(shape_)), data(shape_product(shape), 0.0), requires_grad(requires_grad_) {}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) {
        grad.assign(data.size(), 0.0);
    }
}

void Tensor::zero_grad() {
    std::fill(grad.begin(), grad.end(), 0.0);
}

bool Tensor::all_finite() const {
    auto finite = [](double v) { return std::isfinite(v); };
    return std::all_of(data.begin(), data.end(), finite) &&
           std::all_of(grad.begin(), grad.end(), finite);
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << "]";
    return os.str();
}

TensorRef make_tensor(std::vector<int> shape, bool requires_grad) {
    return std::make_shared<Tensor>(std::move(shape), requires_grad);
}

TensorRef zeros(std::vector<int> shape, bool requires_grad) {
    return make_tensor(std::move(shape), requires_grad);
}

TensorRef ones(std::vector<int> shape) {
    auto t = make_tensor(std::move(shape));
    std::fill(t->data.begin(), t->data.end(), 1.0);
    return t;
}

TensorRef full(std::vector<int> shape, double value) {
    auto t = make_tensor(std::move(shape));
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

TensorRef identity(int n) {
    auto t = make_tensor({n, n});
    for (int i = 0; i < n; ++i) {
        t->at(i, i) = 1.0;
    }
    return t;
}

TensorRef gaussian(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad) {
    auto t = make_tensor(std::move(shape), requires_grad);
    for (double& v : t->data) {
        v = stddev * rng.next_gaussian();
    }
    return t;
}

TensorRef scalar(double value) {
    auto t = make_tensor({1});
    t->data[0] = value;
    return t;
}

void Tape::run_backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        (*it)();
    }
}

void backward(const TensorRef& loss, Tape& tape) {
    if (!loss->is_scalar()) {
        throw ContractError("backward: loss must be a scalar, got " + loss->shape_str());
    }
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    tape.run_backward();
}

// ---------------------------------------------------------------------------
// gemm
// ---------------------------------------------------------------------------

void gemm_nn(const double* a, const double* b, double* out, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        double* outi = out + static_cast<size_t>(i) * n;
        if (!accumulate) {
            std::fill(outi, outi + n, 0.0);
        }
        const double* ai = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) {
                outi[j] += aip * bp[j];
            }
        }
    }
}

void gemm_nt(const double* a, const double* b, double* out, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* outi = out + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) {
                acc += ai[p] * bj[p];
            }
            outi[j] = accumulate ? outi[j] + acc : acc;
        }
    }
}

void gemm_tn(const double* a, const double* b, double* out, int m, int k, int n, bool accumulate) {
    // a is [k x m], b is [k x n]
    if (!accumulate) {
        std::fill(out, out + static_cast<size_t>(m) * n, 0.0);
    }
    for (int p = 0; p < k; ++p) {
        const double* ap = a + static_cast<size_t>(p) * m;
        const double* bp = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double api = ap[i];
            double* outi = out + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                outi[j] += api * bp[j];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise / broadcast
// ---------------------------------------------------------------------------

TensorRef add(Tape& tape, const TensorRef& a, const TensorRef& b) {
    require_same_shape(*a, *b, "add");
    auto out = make_tensor(a->shape, any_requires({a, b}));
    for (int i = 0; i < a->size(); ++i) {
        out->data[i] = a->data[i] + b->data[i];
    }
    if (out->requires_grad) {
        tape.record([a, b, out] {
            for (size_t i = 0; i < out->grad.size(); ++i) {
                if (a->requires_grad) {
                    a->ensure_grad();
                    a->grad[i] += out->grad[i];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    b->grad[i] += out->grad[i];
                }
            }
        });
    }
    return out;
}

TensorRef scale(Tape& tape, const TensorRef& a, double c) {
    auto out = make_tensor(a->shape, a->requires_grad);
    for (int i = 0; i < a->size(); ++i) {
        out->data[i] = c * a->data[i];
    }
    if (out->requires_grad) {
        tape.record([a, out, c] {
            a->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i) {
                a->grad[i] += c * out->grad[i];
            }
        });
    }
    return out;
}

TensorRef add_rowvec(Tape& tape, const TensorRef& a, const TensorRef& b) {
    const int r = a->rows();
    const int c = a->cols();
    if (b->size() != c) {
        throw DimensionError("add_rowvec: " + a->shape_str() + " vs " + b->shape_str());
    }
    auto out = make_tensor(a->shape, any_requires({a, b}));
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
            out->at(i, j) = a->at(i, j) + b->data[j];
        }
    }
    if (out->requires_grad) {
        tape.record([a, b, out, r, c] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < out->grad.size(); ++i) {
                    a->grad[i] += out->grad[i];
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int i = 0; i < r; ++i) {
                    for (int j = 0; j < c; ++j) {
                        b->grad[j] += out->grad[static_cast<size_t>(i) * c + j];
                    }
                }
            }
        });
    }
    return out;
}

TensorRef mul(Tape& tape, const TensorRef& a, const TensorRef& b) {
    require_same_shape(*a, *b, "mul");
    auto out = make_tensor(a->shape, any_requires({a, b}));
    for (int i = 0; i < a->size(); ++i) {
        out->data[i] = a->data[i] * b->data[i];
    }
    if (out->requires_grad) {
        tape.record([a, b, out] {
            for (size_t i = 0; i < out->grad.size(); ++i) {
                if (a->requires_grad) {
                    a->ensure_grad();
                    a->grad[i] += b->data[i] * out->grad[i];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    b->grad[i] += a->data[i] * out->grad[i];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

TensorRef matmul(Tape& tape, const TensorRef& a, const TensorRef& b) {
    const int m = a->rows();
    const int k = a->cols();
    if (b->rows() != k) {
        throw DimensionError("matmul: " + a->shape_str() + " x " + b->shape_str());
    }
    const int n = b->cols();
    auto out = make_tensor({m, n}, any_requires({a, b}));
    gemm_nn(a->data.data(), b->data.data(), out->data.data(), m, k, n, false);
    if (out->requires_grad) {
        tape.record([a, b, out, m, k, n] {
            if (a->requires_grad) {
                a->ensure_grad();
                gemm_nt(out->grad.data(), b->data.data(), a->grad.data(), m, n, k, true);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                gemm_tn(a->data.data(), out->grad.data(), b->grad.data(), k, m, n, true);
            }
        });
    }
    return out;
}

TensorRef matmul_nt(Tape& tape, const TensorRef& a, const TensorRef& b) {
    const int m = a->rows();
    const int k = a->cols();
    if (b->cols() != k) {
        throw DimensionError("matmul_nt: " + a->shape_str() + " x " + b->shape_str() + "^T");
    }
    const int n = b->rows();
    auto out = make_tensor({m, n}, any_requires({a, b}));
    gemm_nt(a->data.data(), b->data.data(), out->data.data(), m, k, n, false);
    if (out->requires_grad) {
        tape.record([a, b, out, m, k, n] {
            if (a->requires_grad) {
                a->ensure_grad();
                gemm_nn(out->grad.data(), b->data.data(), a->grad.data(), m, n, k, true);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                gemm_tn(out->grad.data(), a->data.data(), b->grad.data(), n, m, k, true);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

namespace {
constexpr double kGeluC = 0.7978845608028653558798921198687;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

TensorRef gelu(Tape& tape, const TensorRef& a) {
    auto out = make_tensor(a->shape, a->requires_grad);
    for (int i = 0; i < a->size(); ++i) {
        const double x = a->data[i];
        out->data[i] = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
    }
    if (out->requires_grad) {
        tape.record([a, out] {
            a->ensure_grad();
            for (int i = 0; i < a->size(); ++i) {
                const double x = a->data[i];
                const double u = kGeluC * (x + kGeluA * x * x * x);
                const double t = std::tanh(u);
                const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
                const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                a->grad[i] += d * out->grad[i];
            }
        });
    }
    return out;
}

TensorRef layernorm(Tape& tape, const TensorRef& x, const TensorRef& gain,
                    const TensorRef& bias, double eps) {
    const int r = x->rows();
    const int c = x->cols();
    if (gain->size() != c || bias->size() != c) {
        throw DimensionError("layernorm: gain/bias must match row width");
    }
    auto out = make_tensor(x->shape, any_requires({x, gain, bias}));
    auto xhat = std::make_shared<std::vector<double>>(x->data.size());
    auto inv_std = std::make_shared<std::vector<double>>(r);
    for (int i = 0; i < r; ++i) {
        const double* xi = x->data.data() + static_cast<size_t>(i) * c;
        double mean = 0.0;
        for (int j = 0; j < c; ++j) {
            mean += xi[j];
        }
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double d = xi[j] - mean;
            var += d * d;
        }
        var /= c;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (int j = 0; j < c; ++j) {
            const double h = (xi[j] - mean) * is;
            (*xhat)[static_cast<size_t>(i) * c + j] = h;
            out->at(i, j) = gain->data[j] * h + bias->data[j];
        }
    }
    if (out->requires_grad) {
        tape.record([x, gain, bias, out, xhat, inv_std, r, c] {
            for (int i = 0; i < r; ++i) {
                const double* go = out->grad.data() + static_cast<size_t>(i) * c;
                const double* h = xhat->data() + static_cast<size_t>(i) * c;
                if (gain->requires_grad) {
                    gain->ensure_grad();
                    for (int j = 0; j < c; ++j) {
                        gain->grad[j] += go[j] * h[j];
                    }
                }
                if (bias->requires_grad) {
                    bias->ensure_grad();
                    for (int j = 0; j < c; ++j) {
                        bias->grad[j] += go[j];
                    }
                }
                if (x->requires_grad) {
                    x->ensure_grad();
                    // dxhat = go * gain; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_std
                    double s1 = 0.0;
                    double s2 = 0.0;
                    for (int j = 0; j < c; ++j) {
                        const double dh = go[j] * gain->data[j];
                        s1 += dh;
                        s2 += dh * h[j];
                    }
                    s1 /= c;
                    s2 /= c;
                    double* gx = x->grad.data() + static_cast<size_t>(i) * c;
                    for (int j = 0; j < c; ++j) {
                        const double dh = go[j] * gain->data[j];
                        gx[j] += ((*inv_std)[i]) * (dh - s1 - h[j] * s2);
                    }
                }
            }
        });
    }
    return out;
}

namespace {

// shared softmax backward: dX = P * (dP - rowdot(dP, P))
void softmax_backward_rows(const double* probs, const double* gout, double* gin,
                           int r, int c, int row_limit_offset) {
    for (int i = 0; i < r; ++i) {
        const size_t off = static_cast<size_t>(i) * c;
        const int jmax = row_limit_offset < 0 ? c : std::min(c, i + row_limit_offset);
        double dot = 0.0;
        for (int j = 0; j < jmax; ++j) {
            dot += gout[off + j] * probs[off + j];
        }
        for (int j = 0; j < jmax; ++j) {
            gin[off + j] += probs[off + j] * (gout[off + j] - dot);
        }
    }
}

}  // namespace

TensorRef softmax_rows(Tape& tape, const TensorRef& x) {
    const int r = x->rows();
    const int c = x->cols();
    auto out = make_tensor(x->shape, x->requires_grad);
    for (int i = 0; i < r; ++i) {
        const double* xi = x->data.data() + static_cast<size_t>(i) * c;
        double* oi = out->data.data() + static_cast<size_t>(i) * c;
        double mx = xi[0];
        for (int j = 1; j < c; ++j) {
            mx = std::max(mx, xi[j]);
        }
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            z += oi[j];
        }
        for (int j = 0; j < c; ++j) {
            oi[j] /= z;
        }
    }
    if (out->requires_grad) {
        tape.record([x, out, r, c] {
            x->ensure_grad();
            softmax_backward_rows(out->data.data(), out->grad.data(), x->grad.data(), r, c, -1);
        });
    }
    return out;
}

TensorRef causal_softmax(Tape& tape, const TensorRef& scores) {
    const int r = scores->rows();
    const int c = scores->cols();
    if (r != c) {
        throw DimensionError("causal_softmax: square matrix required, got " + scores->shape_str());
    }
    auto out = make_tensor(scores->shape, scores->requires_grad);
    for (int i = 0; i < r; ++i) {
        const double* xi = scores->data.data() + static_cast<size_t>(i) * c;
        double* oi = out->data.data() + static_cast<size_t>(i) * c;
        double mx = xi[0];
        for (int j = 1; j <= i; ++j) {
            mx = std::max(mx, xi[j]);
        }
        double z = 0.0;
        for (int j = 0; j <= i; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            z += oi[j];
        }
        for (int j = 0; j <= i; ++j) {
            oi[j] /= z;
        }
    }
    if (out->requires_grad) {
        tape.record([scores, out, r, c] {
            scores->ensure_grad();
            softmax_backward_rows(out->data.data(), out->grad.data(), scores->grad.data(), r, c, 1);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

TensorRef cross_entropy(Tape& tape, const TensorRef& logits, std::span<const int> targets) {
    const int t_count = logits->rows();
    const int v = logits->cols();
    if (static_cast<int>(targets.size()) != t_count) {
        throw DimensionError("cross_entropy: targets length must equal logits rows");
    }
    for (int t = 0; t < t_count; ++t) {
        if (targets[t] < 0 || targets[t] >= v) {
            throw IndexError("cross_entropy: target id " + std::to_string(targets[t]) +
                             " out of range for vocab " + std::to_string(v));
        }
    }
    auto probs = std::make_shared<std::vector<double>>(logits->data.size());
    double total = 0.0;
    for (int t = 0; t < t_count; ++t) {
        const double* lt = logits->data.data() + static_cast<size_t>(t) * v;
        double* pt = probs->data() + static_cast<size_t>(t) * v;
        double mx = lt[0];
        for (int j = 1; j < v; ++j) {
            mx = std::max(mx, lt[j]);
        }
        double z = 0.0;
        for (int j = 0; j < v; ++j) {
            pt[j] = std::exp(lt[j] - mx);
            z += pt[j];
        }
        for (int j = 0; j < v; ++j) {
            pt[j] /= z;
        }
        total -= std::log(pt[targets[t]]);
    }
    auto out = make_tensor({1}, logits->requires_grad);
    out->data[0] = total / t_count;
    if (out->requires_grad) {
        std::vector<int> tgt(targets.begin(), targets.end());
        tape.record([logits, out, probs, tgt = std::move(tgt), t_count, v] {
            logits->ensure_grad();
            const double g = out->grad[0] / t_count;
            for (int t = 0; t < t_count; ++t) {
                const size_t off = static_cast<size_t>(t) * v;
                for (int j = 0; j < v; ++j) {
                    logits->grad[off + j] += g * (*probs)[off + j];
                }
                logits->grad[off + tgt[t]] -= g;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// gather / slice / concat
// ---------------------------------------------------------------------------

TensorRef embedding_rows(Tape& tape, const TensorRef& table, std::span<const int> ids) {
    const int v = table->rows();
    const int d = table->cols();
    const int t_count = static_cast<int>(ids.size());
    for (int t = 0; t < t_count; ++t) {
        if (ids[t] < 0 || ids[t] >= v) {
            throw IndexError("embedding_rows: id " + std::to_string(ids[t]) +
                             " out of range for table rows " + std::to_string(v));
        }
    }
    auto out = make_tensor({t_count, d}, table->requires_grad);
    for (int t = 0; t < t_count; ++t) {
        const double* src = table->data.data() + static_cast<size_t>(ids[t]) * d;
        std::copy(src, src + d, out->data.data() + static_cast<size_t>(t) * d);
    }
    if (out->requires_grad) {
        std::vector<int> idv(ids.begin(), ids.end());
        tape.record([table, out, idv = std::move(idv), d] {
            table->ensure_grad();
            for (size_t t = 0; t < idv.size(); ++t) {
                double* dst = table->grad.data() + static_cast<size_t>(idv[t]) * d;
                const double* src = out->grad.data() + t * d;
                for (int j = 0; j < d; ++j) {
                    dst[j] += src[j];
                }
            }
        });
    }
    return out;
}

TensorRef slice_rows(Tape& tape, const TensorRef& a, int r0, int count) {
    const int r = a->rows();
    const int c = a->cols();
    if (r0 < 0 || count < 1 || r0 + count > r) {
        throw DimensionError("slice_rows: range out of bounds");
    }
    auto out = make_tensor({count, c}, a->requires_grad);
    std::copy(a->data.begin() + static_cast<size_t>(r0) * c,
              a->data.begin() + static_cast<size_t>(r0 + count) * c, out->data.begin());
    if (out->requires_grad) {
        tape.record([a, out, r0, count, c] {
            a->ensure_grad();
            for (size_t i = 0; i < static_cast<size_t>(count) * c; ++i) {
                a->grad[static_cast<size_t>(r0) * c + i] += out->grad[i];
            }
        });
    }
    return out;
}

TensorRef slice_cols(Tape& tape, const TensorRef& a, int c0, int count) {
    const int r = a->rows();
    const int c = a->cols();
    if (c0 < 0 || count < 1 || c0 + count > c) {
        throw DimensionError("slice_cols: range out of bounds");
    }
    auto out = make_tensor({r, count}, a->requires_grad);
    for (int i = 0; i < r; ++i) {
        const double* src = a->data.data() + static_cast<size_t>(i) * c + c0;
        std::copy(src, src + count, out->data.data() + static_cast<size_t>(i) * count);
    }
    if (out->requires_grad) {
        tape.record([a, out, c0, count, r, c] {
            a->ensure_grad();
            for (int i = 0; i < r; ++i) {
                for (int j = 0; j < count; ++j) {
                    a->grad[static_cast<size_t>(i) * c + c0 + j] +=
                        out->grad[static_cast<size_t>(i) * count + j];
                }
            }
        });
    }
    return out;
}

TensorRef concat_cols(Tape& tape, const std::vector<TensorRef>& parts) {
    if (parts.empty()) {
        throw DimensionError("concat_cols: no parts");
    }
    const int r = parts[0]->rows();
    int total = 0;
    bool needs_grad = false;
    for (const auto& p : parts) {
        if (p->rows() != r) {
            throw DimensionError("concat_cols: row mismatch");
        }
        total += p->cols();
        needs_grad = needs_grad || p->requires_grad;
    }
    auto out = make_tensor({r, total}, needs_grad);
    int col = 0;
    for (const auto& p : parts) {
        const int pc = p->cols();
        for (int i = 0; i < r; ++i) {
            std::copy(p->data.data() + static_cast<size_t>(i) * pc,
                      p->data.data() + static_cast<size_t>(i + 1) * pc,
                      out->data.data() + static_cast<size_t>(i) * total + col);
        }
        col += pc;
    }
    if (needs_grad) {
        tape.record([parts, out, r, total] {
            int col = 0;
            for (const auto& p : parts) {
                const int pc = p->cols();
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int i = 0; i < r; ++i) {
                        for (int j = 0; j < pc; ++j) {
                            p->grad[static_cast<size_t>(i) * pc + j] +=
                                out->grad[static_cast<size_t>(i) * total + col + j];
                        }
                    }
                }
                col += pc;
            }
        });
    }
    return out;
}

TensorRef mix_rows(Tape& tape, const std::vector<TensorRef>& outs, const TensorRef& weights) {
    const int n = static_cast<int>(outs.size());
    if (weights->cols() != n) {
        throw DimensionError("mix_rows: weight columns must equal expert count");
    }
    const int r = weights->rows();
    const int d = outs[0]->cols();
    bool needs_grad = weights->requires_grad;
    for (const auto& o : outs) {
        if (o->rows() != r || o->cols() != d) {
            throw DimensionError("mix_rows: expert output shape mismatch");
        }
        needs_grad = needs_grad || o->requires_grad;
    }
    auto out = make_tensor({r, d}, needs_grad);
    for (int t = 0; t < r; ++t) {
        double* ot = out->data.data() + static_cast<size_t>(t) * d;
        for (int i = 0; i < n; ++i) {
            const double w = weights->at(t, i);
            const double* ei = outs[i]->data.data() + static_cast<size_t>(t) * d;
            for (int j = 0; j < d; ++j) {
                ot[j] += w * ei[j];
            }
        }
    }
    if (needs_grad) {
        tape.record([outs, weights, out, r, d, n] {
            for (int t = 0; t < r; ++t) {
                const double* got = out->grad.data() + static_cast<size_t>(t) * d;
                for (int i = 0; i < n; ++i) {
                    const double* ei = outs[i]->data.data() + static_cast<size_t>(t) * d;
                    if (weights->requires_grad) {
                        weights->ensure_grad();
                        double dot = 0.0;
                        for (int j = 0; j < d; ++j) {
                            dot += ei[j] * got[j];
                        }
                        weights->grad[static_cast<size_t>(t) * n + i] += dot;
                    }
                    if (outs[i]->requires_grad) {
                        outs[i]->ensure_grad();
                        const double w = weights->at(t, i);
                        double* gi = outs[i]->grad.data() + static_cast<size_t>(t) * d;
                        for (int j = 0; j < d; ++j) {
                            gi[j] += w * got[j];
                        }
                    }
                }
            }
        });
    }
    return out;
}

TensorRef sum(Tape& tape, const TensorRef& a) {
    auto out = make_tensor({1}, a->requires_grad);
    double s = 0.0;
    for (double v : a->data) {
        s += v;
    }
    out->data[0] = s;
    if (out->requires_grad) {
        tape.record([a, out] {
            a->ensure_grad();
            for (double& g : a->grad) {
                g += out->grad[0];
            }
        });
    }
    return out;
}

TensorRef mean_of(Tape& tape, const std::vector<TensorRef>& scalars) {
    if (scalars.empty()) {
        throw ContractError("mean_of: empty input");
    }
    bool needs_grad = false;
    double s = 0.0;
    for (const auto& t : scalars) {
        if (!t->is_scalar()) {
            throw ContractError("mean_of: inputs must be scalars");
        }
        s += t->data[0];
        needs_grad = needs_grad || t->requires_grad;
    }
    auto out = make_tensor({1}, needs_grad);
    out->data[0] = s / scalars.size();
    if (needs_grad) {
        tape.record([scalars, out] {
            const double g = out->grad[0] / scalars.size();
            for (const auto& t : scalars) {
                if (t->requires_grad) {
                    t->ensure_grad();
                    t->grad[0] += g;
                }
            }
        });
    }
    return out;
}

}  // namespace mergelab::nn
