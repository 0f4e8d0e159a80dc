#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "attrvit/errors.hpp"

namespace attrvit {

#ifdef ATTRVIT_FLOAT32
using scalar = float;
#else
using scalar = double;
#endif

// Dense row-major tensor. The handle has value semantics but shares its
// storage, so copies held by tape closures observe later grad updates.
// A grad buffer exists only for tensors that participate in backward().
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::vector<int64_t> shape, std::vector<scalar> values);

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int64_t> shape, scalar v);
    static Tensor scalar_value(scalar v) { return Tensor({1}, {v}); }

    bool defined() const { return st_ != nullptr; }
    const std::vector<int64_t>& shape() const;
    int ndim() const { return static_cast<int>(shape().size()); }
    int64_t dim(int i) const { return shape()[static_cast<size_t>(i)]; }
    int64_t size() const;

    // 2-D helpers; throw DimensionError when the rank does not match.
    int64_t rows() const;
    int64_t cols() const;

    scalar* data();
    const scalar* data() const;
    scalar& at(int64_t i);
    scalar at(int64_t i) const;
    scalar& at(int64_t r, int64_t c);
    scalar at(int64_t r, int64_t c) const;

    // Value of a single-element tensor.
    scalar item() const;

    bool has_grad() const;
    void ensure_grad();
    void zero_grad();
    scalar* grad();
    const scalar* grad() const;

    // Deep copy of values only (no grad slot, fresh storage).
    Tensor detached_copy() const;

    std::string shape_str() const;

  private:
    struct Storage {
        std::vector<int64_t> shape;
        std::vector<scalar> data;
        std::vector<scalar> grad;  // empty until ensure_grad()
        bool has_grad = false;
    };
    std::shared_ptr<Storage> st_;
    void require_defined() const;
};

// Ordered record of executed ops. Replaying the closures in reverse
// registration order propagates adjoints; clear() drops all captured
// tensor handles.
class Tape {
  public:
    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }
    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Runs every recorded closure exactly once, newest first.
    void replay_adjoints() {
        for (size_t i = nodes_.size(); i > 0; --i) nodes_[i - 1]();
    }

  private:
    std::vector<std::function<void()>> nodes_;
};

// Ops. A null tape means forward-only. When a tape is given, the op
// allocates a grad buffer on its output and registers an adjoint closure;
// gradients are accumulated only into inputs that carry a grad buffer.

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
// x is r x c, bias has c entries added to every row.
Tensor add_row_bias(const Tensor& x, const Tensor& bias, Tape* tape = nullptr);
Tensor scale(const Tensor& x, scalar alpha, Tape* tape = nullptr);
Tensor transpose(const Tensor& x, Tape* tape = nullptr);
Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1, Tape* tape = nullptr);
Tensor concat_cols(const std::vector<Tensor>& xs, Tape* tape = nullptr);
Tensor concat_rows(const std::vector<Tensor>& xs, Tape* tape = nullptr);
Tensor take_row(const Tensor& x, int64_t row, Tape* tape = nullptr);
Tensor reshape(const Tensor& x, std::vector<int64_t> shape, Tape* tape = nullptr);
// Row-wise softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& x, Tape* tape = nullptr);
// Per-row normalisation over the last axis (population variance), then
// elementwise gain/bias. x is r x d or a plain d-vector.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, scalar eps,
                  Tape* tape = nullptr);
// tanh-form GELU.
Tensor gelu(const Tensor& x, Tape* tape = nullptr);
// Mean squared error over all elements; returns a scalar tensor.
Tensor mse(const Tensor& pred, const Tensor& target, Tape* tape = nullptr);
Tensor sum(const Tensor& x, Tape* tape = nullptr);

// Seeds loss.grad = 1 and replays the tape. Loss must be a single element.
void backward(Tensor& loss, Tape& tape);

bool all_finite(const Tensor& t);

// Central-difference gradient verification. f must be deterministic and
// return a scalar tensor built on the tape it is given. The step for each
// element is base_step * max(1, |theta|).
struct GradCheckBlock {
    std::string name;
    scalar max_rel_err = 0;
    int64_t worst_index = -1;
};

struct GradCheckReport {
    std::vector<GradCheckBlock> blocks;
    scalar tol = 0;
    scalar worst = 0;
    std::string worst_block;
    bool all_under(scalar t) const {
        for (const auto& b : blocks)
            if (!(b.max_rel_err < t)) return false;
        return true;
    }
    bool passed() const { return all_under(tol); }
};

GradCheckReport grad_check(const std::function<Tensor(Tape&)>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           scalar base_step, scalar tol);

}  // namespace attrvit
