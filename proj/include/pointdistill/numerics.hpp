#pragma once

// Dense kernels with hand-written backward passes. Everything is float64.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "pointdistill/errors.hpp"

namespace pdistill {

/// Row-major dense matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values);

    static Matrix identity(std::size_t n);

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool empty() const { return data.empty(); }
    bool all_finite() const;

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// Y = X * W^T with W stored out x in.
struct LinearParams {
    Matrix W;               // out x in
    std::vector<double> b;  // out

    LinearParams() = default;
    LinearParams(std::size_t in, std::size_t out) : W(out, in), b(out, 0.0) {}

    std::size_t in_dim() const { return W.cols; }
    std::size_t out_dim() const { return W.rows; }

    friend bool operator==(const LinearParams&, const LinearParams&) = default;
};

struct LinearGrads {
    Matrix dW;
    std::vector<double> db;
    Matrix dX;
};

Matrix linear_forward(const LinearParams& p, const Matrix& X);
LinearGrads linear_backward(const LinearParams& p, const Matrix& X, const Matrix& dY);

enum class BnMode { train, eval };

struct BatchNormState {
    std::vector<double> scale;  // gamma_bn
    std::vector<double> shift;  // beta_bn
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;
    BnMode mode = BnMode::train;

    BatchNormState() = default;
    explicit BatchNormState(std::size_t channels)
        : scale(channels, 1.0), shift(channels, 0.0), running_mean(channels, 0.0), running_var(channels, 1.0) {}

    std::size_t channels() const { return scale.size(); }

    friend bool operator==(const BatchNormState&, const BatchNormState&) = default;
};

/// Saved forward quantities for the backward pass and for deferred running-stat updates.
struct BatchNormCache {
    BnMode mode = BnMode::eval;
    Matrix xhat;
    std::vector<double> inv_std;
    std::vector<double> batch_mean;
    std::vector<double> batch_var;  // biased
    std::size_t batch = 0;
};

struct BatchNormGrads {
    std::vector<double> dscale;
    std::vector<double> dshift;
    Matrix dX;
};

/// Normalizes per channel. Train mode uses batch statistics and folds them into the
/// running stats (momentum, unbiased variance); eval mode uses the running stats.
Matrix batchnorm_forward(BatchNormState& s, const Matrix& X, BatchNormCache* cache = nullptr);

/// Same as batchnorm_forward but never touches `s`; apply the update later with
/// batchnorm_update_running. Used when several batches are processed independently.
Matrix batchnorm_forward_deferred(const BatchNormState& s, const Matrix& X, BatchNormCache& cache);
void batchnorm_update_running(BatchNormState& s, const BatchNormCache& cache);
/// Stateless forward with an explicit mode.
Matrix batchnorm_apply(const BatchNormState& s, const Matrix& X, BnMode mode, BatchNormCache& cache);

BatchNormGrads batchnorm_backward(const BatchNormState& s, const BatchNormCache& cache, const Matrix& dY);

Matrix relu(const Matrix& X);
/// Gradient passes only where X > 0.
Matrix relu_backward(const Matrix& X, const Matrix& dY);

/// exp(v/tau) / sum exp(v/tau), max-shifted.
std::vector<double> softmax_temp(std::span<const double> v, double tau);

/// Central-difference check. `loss` is re-evaluated after each in-place perturbation of
/// `coords[k]`; returns max_k |a-n| / max(1, |a|, |n|).
double grad_check(const std::function<double()>& loss, std::span<double> coords,
                  std::span<const double> analytic, double eps);

/// Linear -> batch norm -> ReLU. The building block of encoders and of the graph aggregator.
struct DenseBlock {
    LinearParams linear;
    BatchNormState bn;

    DenseBlock() = default;
    DenseBlock(std::size_t in, std::size_t out) : linear(in, out), bn(out) {}

    friend bool operator==(const DenseBlock&, const DenseBlock&) = default;
};

struct DenseBlockCache {
    Matrix input;
    Matrix pre_bn;
    BatchNormCache bn;
    Matrix pre_relu;
};

struct DenseBlockGrads {
    LinearParams linear;  // dW, db
    std::vector<double> dscale;
    std::vector<double> dshift;

    DenseBlockGrads() = default;
    explicit DenseBlockGrads(const DenseBlock& like);

    void accumulate(const DenseBlockGrads& other);
    void scale_by(double f);
};

/// `bn_mode` overrides the block's own mode for this call. Running stats are not touched;
/// callers apply them with batchnorm_update_running(block.bn, cache.bn).
Matrix dense_forward(const DenseBlock& block, const Matrix& X, BnMode bn_mode, DenseBlockCache& cache);
/// Returns dL/dX and accumulates parameter gradients into `grads`.
Matrix dense_backward(const DenseBlock& block, const DenseBlockCache& cache, const Matrix& dY,
                      DenseBlockGrads& grads);

/// A (value, gradient) pair over one contiguous parameter buffer.
struct ParamSlot {
    std::span<double> value;
    std::span<const double> grad;
};

void collect_slots(LinearParams& p, const LinearParams& g, std::vector<ParamSlot>& out);
void collect_slots(DenseBlock& p, const DenseBlockGrads& g, std::vector<ParamSlot>& out);

/// Uniform(-1/sqrt(in), 1/sqrt(in)) weights and bias.
template <class Rng>
void init_uniform(LinearParams& p, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(p.in_dim()));
    for (auto& w : p.W.data) w = rng.uniform(-bound, bound);
    for (auto& v : p.b) v = rng.uniform(-bound, bound);
}

}  // namespace pdistill
