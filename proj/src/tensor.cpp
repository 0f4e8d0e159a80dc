#include "attrvit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace attrvit {

namespace {

int64_t shape_product(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw DimensionError("tensor extents must be positive");
        n *= d;
    }
    return n;
}

std::string shape_to_str(const std::vector<int64_t>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn_acc(const scalar* A, const scalar* B, scalar* C, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const scalar* a_row = A + i * k;
        scalar* c_row = C + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const scalar a = a_row[p];
            if (a == scalar(0)) continue;
            const scalar* b_row = B + p * n;
            for (int64_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
        }
    }
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt_acc(const scalar* A, const scalar* B, scalar* C, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const scalar* a_row = A + i * k;
        scalar* c_row = C + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const scalar* b_row = B + j * k;
            scalar acc = 0;
            for (int64_t p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
            c_row[j] += acc;
        }
    }
}

// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn_acc(const scalar* A, const scalar* B, scalar* C, int64_t m, int64_t k, int64_t n) {
    for (int64_t p = 0; p < k; ++p) {
        const scalar* a_row = A + p * m;
        const scalar* b_row = B + p * n;
        for (int64_t i = 0; i < m; ++i) {
            const scalar a = a_row[i];
            if (a == scalar(0)) continue;
            scalar* c_row = C + i * n;
            for (int64_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
        }
    }
}

void require_2d(const Tensor& t, const char* what) {
    if (t.ndim() != 2) throw DimensionError(std::string(what) + " expects a 2-D tensor, got " + t.shape_str());
}

// Treats 1-D vectors as a single row so layer_norm works on both.
std::pair<int64_t, int64_t> as_rows_cols(const Tensor& t) {
    if (t.ndim() == 1) return {1, t.dim(0)};
    require_2d(t, "op");
    return {t.rows(), t.cols()};
}

}  // namespace

Tensor::Tensor(std::vector<int64_t> shape) {
    const int64_t n = shape_product(shape);
    st_ = std::make_shared<Storage>();
    st_->shape = std::move(shape);
    st_->data.assign(static_cast<size_t>(n), scalar(0));
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<scalar> values) {
    const int64_t n = shape_product(shape);
    if (n != static_cast<int64_t>(values.size()))
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_to_str(shape));
    st_ = std::make_shared<Storage>();
    st_->shape = std::move(shape);
    st_->data = std::move(values);
}

Tensor Tensor::full(std::vector<int64_t> shape, scalar v) {
    Tensor t(std::move(shape));
    std::fill(t.st_->data.begin(), t.st_->data.end(), v);
    return t;
}

void Tensor::require_defined() const {
    if (!st_) throw ContractError("operation on an undefined tensor");
}

const std::vector<int64_t>& Tensor::shape() const {
    require_defined();
    return st_->shape;
}

int64_t Tensor::size() const {
    require_defined();
    return static_cast<int64_t>(st_->data.size());
}

int64_t Tensor::rows() const {
    require_2d(*this, "rows()");
    return dim(0);
}

int64_t Tensor::cols() const {
    require_2d(*this, "cols()");
    return dim(1);
}

scalar* Tensor::data() {
    require_defined();
    return st_->data.data();
}

const scalar* Tensor::data() const {
    require_defined();
    return st_->data.data();
}

scalar& Tensor::at(int64_t i) { return data()[i]; }
scalar Tensor::at(int64_t i) const { return data()[i]; }
scalar& Tensor::at(int64_t r, int64_t c) { return data()[r * cols() + c]; }
scalar Tensor::at(int64_t r, int64_t c) const { return data()[r * cols() + c]; }

scalar Tensor::item() const {
    if (size() != 1) throw ContractError("item() on a tensor of size " + std::to_string(size()));
    return data()[0];
}

bool Tensor::has_grad() const { return st_ && st_->has_grad; }

void Tensor::ensure_grad() {
    require_defined();
    if (!st_->has_grad) {
        st_->grad.assign(st_->data.size(), scalar(0));
        st_->has_grad = true;
    }
}

void Tensor::zero_grad() {
    require_defined();
    if (st_->has_grad) std::fill(st_->grad.begin(), st_->grad.end(), scalar(0));
}

scalar* Tensor::grad() {
    if (!has_grad()) throw ContractError("grad() on a tensor without a grad buffer");
    return st_->grad.data();
}

const scalar* Tensor::grad() const {
    if (!has_grad()) throw ContractError("grad() on a tensor without a grad buffer");
    return st_->grad.data();
}

Tensor Tensor::detached_copy() const {
    require_defined();
    return Tensor(st_->shape, st_->data);
}

std::string Tensor::shape_str() const {
    require_defined();
    return shape_to_str(st_->shape);
}

namespace {

// Registers the adjoint and makes sure the output can receive gradient.
void record_op(Tape* tape, Tensor& out, std::function<void()> fn) {
    if (!tape) return;
    out.ensure_grad();
    tape->record(std::move(fn));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.cols() != b.rows())
        throw DimensionError("matmul inner extents differ: " + a.shape_str() + " vs " + b.shape_str());
    const int64_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out({m, n});
    gemm_nn_acc(a.data(), b.data(), out.data(), m, k, n);
    record_op(tape, out, [a = a, b = b, out, m, k, n]() mutable {
        if (a.has_grad()) gemm_nt_acc(out.grad(), b.data(), a.grad(), m, n, k);
        if (b.has_grad()) gemm_tn_acc(a.data(), out.grad(), b.grad(), k, m, n);
    });
    return out;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
    if (a.shape() != b.shape())
        throw DimensionError("add shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
    Tensor out(a.shape());
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) + b.at(i);
    record_op(tape, out, [a = a, b = b, out, n]() mutable {
        if (a.has_grad()) {
            scalar* g = a.grad();
            const scalar* og = out.grad();
            for (int64_t i = 0; i < n; ++i) g[i] += og[i];
        }
        if (b.has_grad()) {
            scalar* g = b.grad();
            const scalar* og = out.grad();
            for (int64_t i = 0; i < n; ++i) g[i] += og[i];
        }
    });
    return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias, Tape* tape) {
    require_2d(x, "add_row_bias");
    if (bias.ndim() != 1 || bias.dim(0) != x.cols())
        throw DimensionError("bias " + bias.shape_str() + " does not match row width of " + x.shape_str());
    const int64_t r = x.rows(), c = x.cols();
    Tensor out({r, c});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.at(i, j) = x.at(i, j) + bias.at(j);
    record_op(tape, out, [x = x, bias = bias, out, r, c]() mutable {
        const scalar* og = out.grad();
        if (x.has_grad()) {
            scalar* g = x.grad();
            for (int64_t i = 0; i < r * c; ++i) g[i] += og[i];
        }
        if (bias.has_grad()) {
            scalar* g = bias.grad();
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) g[j] += og[i * c + j];
        }
    });
    return out;
}

Tensor scale(const Tensor& x, scalar alpha, Tape* tape) {
    Tensor out(x.shape());
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) out.at(i) = alpha * x.at(i);
    record_op(tape, out, [x = x, out, alpha, n]() mutable {
        if (!x.has_grad()) return;
        scalar* g = x.grad();
        const scalar* og = out.grad();
        for (int64_t i = 0; i < n; ++i) g[i] += alpha * og[i];
    });
    return out;
}

Tensor transpose(const Tensor& x, Tape* tape) {
    require_2d(x, "transpose");
    const int64_t r = x.rows(), c = x.cols();
    Tensor out({c, r});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
    record_op(tape, out, [x = x, out, r, c]() mutable {
        if (!x.has_grad()) return;
        scalar* g = x.grad();
        const scalar* og = out.grad();
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) g[i * c + j] += og[j * r + i];
    });
    return out;
}

Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1, Tape* tape) {
    require_2d(x, "slice_cols");
    if (c0 < 0 || c1 > x.cols() || c0 >= c1)
        throw DimensionError("slice_cols [" + std::to_string(c0) + ", " + std::to_string(c1) +
                             ") out of range for " + x.shape_str());
    const int64_t r = x.rows(), c = x.cols(), w = c1 - c0;
    Tensor out({r, w});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < w; ++j) out.at(i, j) = x.at(i, c0 + j);
    record_op(tape, out, [x = x, out, r, c, c0, w]() mutable {
        if (!x.has_grad()) return;
        scalar* g = x.grad();
        const scalar* og = out.grad();
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < w; ++j) g[i * c + c0 + j] += og[i * w + j];
    });
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& xs, Tape* tape) {
    if (xs.empty()) throw DimensionError("concat_cols of zero tensors");
    const int64_t r = xs[0].rows();
    int64_t total = 0;
    for (const auto& t : xs) {
        require_2d(t, "concat_cols");
        if (t.rows() != r) throw DimensionError("concat_cols row mismatch");
        total += t.cols();
    }
    Tensor out({r, total});
    int64_t off = 0;
    for (const auto& t : xs) {
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < t.cols(); ++j) out.at(i, off + j) = t.at(i, j);
        off += t.cols();
    }
    record_op(tape, out, [xs = xs, out, r, total]() mutable {
        const scalar* og = out.grad();
        int64_t off = 0;
        for (auto& t : xs) {
            const int64_t c = t.cols();
            if (t.has_grad()) {
                scalar* g = t.grad();
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < c; ++j) g[i * c + j] += og[i * total + off + j];
            }
            off += c;
        }
    });
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& xs, Tape* tape) {
    if (xs.empty()) throw DimensionError("concat_rows of zero tensors");
    const int64_t c = xs[0].cols();
    int64_t total = 0;
    for (const auto& t : xs) {
        require_2d(t, "concat_rows");
        if (t.cols() != c) throw DimensionError("concat_rows column mismatch");
        total += t.rows();
    }
    Tensor out({total, c});
    int64_t off = 0;
    for (const auto& t : xs) {
        for (int64_t i = 0; i < t.rows(); ++i)
            for (int64_t j = 0; j < c; ++j) out.at(off + i, j) = t.at(i, j);
        off += t.rows();
    }
    record_op(tape, out, [xs = xs, out, c]() mutable {
        const scalar* og = out.grad();
        int64_t off = 0;
        for (auto& t : xs) {
            const int64_t r = t.rows();
            if (t.has_grad()) {
                scalar* g = t.grad();
                for (int64_t i = 0; i < r * c; ++i) g[i] += og[off * c + i];
            }
            off += r;
        }
    });
    return out;
}

Tensor take_row(const Tensor& x, int64_t row, Tape* tape) {
    require_2d(x, "take_row");
    if (row < 0 || row >= x.rows())
        throw DimensionError("take_row " + std::to_string(row) + " out of range for " + x.shape_str());
    const int64_t c = x.cols();
    Tensor out({1, c});
    for (int64_t j = 0; j < c; ++j) out.at(0, j) = x.at(row, j);
    record_op(tape, out, [x = x, out, row, c]() mutable {
        if (!x.has_grad()) return;
        scalar* g = x.grad();
        const scalar* og = out.grad();
        for (int64_t j = 0; j < c; ++j) g[row * c + j] += og[j];
    });
    return out;
}

Tensor reshape(const Tensor& x, std::vector<int64_t> shape, Tape* tape) {
    const int64_t n = shape_product(shape);
    if (n != x.size())
        throw DimensionError("reshape to " + shape_to_str(shape) + " from " + x.shape_str());
    Tensor out(std::move(shape));
    std::copy(x.data(), x.data() + n, out.data());
    record_op(tape, out, [x = x, out, n]() mutable {
        if (!x.has_grad()) return;
        scalar* g = x.grad();
        const scalar* og = out.grad();
        for (int64_t i = 0; i < n; ++i) g[i] += og[i];
    });
    return out;
}

Tensor softmax_rows(const Tensor& x, Tape* tape) {
    const auto [r, c] = as_rows_cols(x);
    Tensor out(x.shape());
    for (int64_t i = 0; i < r; ++i) {
        const scalar* xin = x.data() + i * c;
        scalar* o = out.data() + i * c;
        scalar mx = xin[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, xin[j]);
        scalar denom = 0;
        for (int64_t j = 0; j < c; ++j) {
            o[j] = std::exp(xin[j] - mx);
            denom += o[j];
        }
        for (int64_t j = 0; j < c; ++j) o[j] /= denom;
    }
    record_op(tape, out, [x = x, out, r, c]() mutable {
        if (!x.has_grad()) return;
        scalar* g = x.grad();
        const scalar* y = out.data();
        const scalar* og = out.grad();
        for (int64_t i = 0; i < r; ++i) {
            const scalar* yi = y + i * c;
            const scalar* gi = og + i * c;
            scalar dot = 0;
            for (int64_t j = 0; j < c; ++j) dot += yi[j] * gi[j];
            scalar* xg = g + i * c;
            for (int64_t j = 0; j < c; ++j) xg[j] += yi[j] * (gi[j] - dot);
        }
    });
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, scalar eps, Tape* tape) {
    const auto [r, d] = as_rows_cols(x);
    if (gain.size() != d || bias.size() != d)
        throw DimensionError("layer_norm gain/bias must have " + std::to_string(d) + " entries");
    Tensor out(x.shape());
    for (int64_t i = 0; i < r; ++i) {
        const scalar* xi = x.data() + i * d;
        scalar* o = out.data() + i * d;
        scalar mean = 0;
        for (int64_t j = 0; j < d; ++j) mean += xi[j];
        mean /= static_cast<scalar>(d);
        scalar var = 0;
        for (int64_t j = 0; j < d; ++j) {
            const scalar dv = xi[j] - mean;
            var += dv * dv;
        }
        var /= static_cast<scalar>(d);
        const scalar inv = scalar(1) / std::sqrt(var + eps);
        for (int64_t j = 0; j < d; ++j) o[j] = gain.at(j) * ((xi[j] - mean) * inv) + bias.at(j);
    }
    record_op(tape, out, [x = x, gain = gain, bias = bias, out, r, d, eps]() mutable {
        const scalar* og = out.grad();
        std::vector<scalar> xhat(static_cast<size_t>(d));
        for (int64_t i = 0; i < r; ++i) {
            const scalar* xi = x.data() + i * d;
            const scalar* gi = og + i * d;
            scalar mean = 0;
            for (int64_t j = 0; j < d; ++j) mean += xi[j];
            mean /= static_cast<scalar>(d);
            scalar var = 0;
            for (int64_t j = 0; j < d; ++j) {
                const scalar dv = xi[j] - mean;
                var += dv * dv;
            }
            var /= static_cast<scalar>(d);
            const scalar inv = scalar(1) / std::sqrt(var + eps);
            for (int64_t j = 0; j < d; ++j) xhat[static_cast<size_t>(j)] = (xi[j] - mean) * inv;

            if (bias.has_grad()) {
                scalar* bg = bias.grad();
                for (int64_t j = 0; j < d; ++j) bg[j] += gi[j];
            }
            if (gain.has_grad()) {
                scalar* gg = gain.grad();
                for (int64_t j = 0; j < d; ++j) gg[j] += gi[j] * xhat[static_cast<size_t>(j)];
            }
            if (x.has_grad()) {
                // dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat .* xhat))
                scalar sum_dx = 0, sum_dxx = 0;
                for (int64_t j = 0; j < d; ++j) {
                    const scalar dxh = gi[j] * gain.at(j);
                    sum_dx += dxh;
                    sum_dxx += dxh * xhat[static_cast<size_t>(j)];
                }
                const scalar m1 = sum_dx / static_cast<scalar>(d);
                const scalar m2 = sum_dxx / static_cast<scalar>(d);
                scalar* xg = x.grad() + i * d;
                for (int64_t j = 0; j < d; ++j) {
                    const scalar dxh = gi[j] * gain.at(j);
                    xg[j] += inv * (dxh - m1 - xhat[static_cast<size_t>(j)] * m2);
                }
            }
        }
    });
    return out;
}

namespace {
constexpr scalar kGeluCoef = scalar(0.7978845608028654);  // sqrt(2/pi)
constexpr scalar kGeluCubic = scalar(0.044715);
}  // namespace

Tensor gelu(const Tensor& x, Tape* tape) {
    Tensor out(x.shape());
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) {
        const scalar v = x.at(i);
        const scalar u = kGeluCoef * (v + kGeluCubic * v * v * v);
        out.at(i) = scalar(0.5) * v * (scalar(1) + std::tanh(u));
    }
    record_op(tape, out, [x = x, out, n]() mutable {
        if (!x.has_grad()) return;
        scalar* g = x.grad();
        const scalar* og = out.grad();
        for (int64_t i = 0; i < n; ++i) {
            const scalar v = x.at(i);
            const scalar u = kGeluCoef * (v + kGeluCubic * v * v * v);
            const scalar t = std::tanh(u);
            const scalar sech2 = scalar(1) - t * t;
            const scalar du = kGeluCoef * (scalar(1) + scalar(3) * kGeluCubic * v * v);
            const scalar d = scalar(0.5) * (scalar(1) + t) + scalar(0.5) * v * sech2 * du;
            g[i] += d * og[i];
        }
    });
    return out;
}

Tensor mse(const Tensor& pred, const Tensor& target, Tape* tape) {
    if (pred.shape() != target.shape())
        throw DimensionError("mse shape mismatch: " + pred.shape_str() + " vs " + target.shape_str());
    const int64_t n = pred.size();
    scalar acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        const scalar d = pred.at(i) - target.at(i);
        acc += d * d;
    }
    Tensor out = Tensor::scalar_value(acc / static_cast<scalar>(n));
    record_op(tape, out, [pred = pred, target = target, out, n]() mutable {
        const scalar g = out.grad()[0] * scalar(2) / static_cast<scalar>(n);
        if (pred.has_grad()) {
            scalar* pg = pred.grad();
            for (int64_t i = 0; i < n; ++i) pg[i] += g * (pred.at(i) - target.at(i));
        }
        if (target.has_grad()) {
            scalar* tg = target.grad();
            for (int64_t i = 0; i < n; ++i) tg[i] -= g * (pred.at(i) - target.at(i));
        }
    });
    return out;
}

Tensor sum(const Tensor& x, Tape* tape) {
    scalar acc = 0;
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) acc += x.at(i);
    Tensor out = Tensor::scalar_value(acc);
    record_op(tape, out, [x = x, out, n]() mutable {
        if (!x.has_grad()) return;
        scalar* g = x.grad();
        const scalar og = out.grad()[0];
        for (int64_t i = 0; i < n; ++i) g[i] += og;
    });
    return out;
}

void backward(Tensor& loss, Tape& tape) {
    if (loss.size() != 1)
        throw ContractError("backward() needs a scalar loss, got " + loss.shape_str());
    if (!loss.has_grad())
        throw ContractError("backward() loss was not produced through recorded ops");
    loss.grad()[0] = scalar(1);
    tape.replay_adjoints();
}

bool all_finite(const Tensor& t) {
    const int64_t n = t.size();
    for (int64_t i = 0; i < n; ++i)
        if (!std::isfinite(t.at(i))) return false;
    return true;
}

GradCheckReport grad_check(const std::function<Tensor(Tape&)>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           scalar base_step, scalar tol) {
    // Analytic pass.
    for (const auto& [name, p] : params) {
        Tensor t = p;
        t.ensure_grad();
        t.zero_grad();
    }
    Tape tape;
    Tensor loss = f(tape);
    backward(loss, tape);
    std::vector<std::vector<scalar>> analytic;
    analytic.reserve(params.size());
    for (const auto& [name, p] : params)
        analytic.emplace_back(p.grad(), p.grad() + p.size());
    tape.clear();

    auto eval = [&f]() {
        Tape t;
        Tensor l = f(t);
        return l.item();
    };

    GradCheckReport report;
    report.tol = tol;
    for (size_t b = 0; b < params.size(); ++b) {
        Tensor p = params[b].second;
        GradCheckBlock block;
        block.name = params[b].first;
        const int64_t n = p.size();
        for (int64_t i = 0; i < n; ++i) {
            const scalar saved = p.at(i);
            const scalar h = base_step * std::max(scalar(1), std::fabs(saved));
            p.at(i) = saved + h;
            const scalar fp = eval();
            p.at(i) = saved - h;
            const scalar fm = eval();
            p.at(i) = saved;
            const scalar fd = (fp - fm) / (2 * h);
            const scalar ad = analytic[b][static_cast<size_t>(i)];
            const scalar rel = std::fabs(ad - fd) /
                               std::max(scalar(1), std::max(std::fabs(ad), std::fabs(fd)));
            if (rel > block.max_rel_err) {
                block.max_rel_err = rel;
                block.worst_index = i;
            }
        }
        if (block.max_rel_err >= report.worst) {
            report.worst = block.max_rel_err;
            report.worst_block = block.name;
        }
        report.blocks.push_back(std::move(block));
    }
    return report;
}

}  // namespace attrvit
