#include "pointdistill/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace pdistill {

std::string shape_str(std::size_t rows, std::size_t cols) {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) {
        throw ShapeError("matrix data length " + std::to_string(data.size()) + " does not match " + shape_str(r, c));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool Matrix::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

Matrix linear_forward(const LinearParams& p, const Matrix& X) {
    const std::size_t in = p.in_dim();
    const std::size_t out = p.out_dim();
    if (X.cols != in) {
        throw ShapeError("linear_forward: input " + shape_str(X.rows, X.cols) + " vs weight " + shape_str(out, in));
    }
    if (p.b.size() != out) {
        throw ShapeError("linear_forward: bias length " + std::to_string(p.b.size()) + " vs weight " +
                         shape_str(out, in));
    }
    // Transposed copy so the inner loop is a contiguous axpy.
    Matrix Wt(in, out);
    for (std::size_t o = 0; o < out; ++o)
        for (std::size_t k = 0; k < in; ++k) Wt(k, o) = p.W(o, k);

    Matrix Y(X.rows, out);
    for (std::size_t i = 0; i < X.rows; ++i) {
        double* y = Y.data.data() + i * out;
        std::copy(p.b.begin(), p.b.end(), y);
        const double* x = X.data.data() + i * in;
        for (std::size_t k = 0; k < in; ++k) {
            const double xv = x[k];
            const double* w = Wt.data.data() + k * out;
            for (std::size_t o = 0; o < out; ++o) y[o] += xv * w[o];
        }
    }
    return Y;
}

LinearGrads linear_backward(const LinearParams& p, const Matrix& X, const Matrix& dY) {
    const std::size_t in = p.in_dim();
    const std::size_t out = p.out_dim();
    if (X.cols != in || dY.cols != out || dY.rows != X.rows) {
        throw ShapeError("linear_backward: input " + shape_str(X.rows, X.cols) + " and upstream " +
                         shape_str(dY.rows, dY.cols) + " vs weight " + shape_str(out, in));
    }
    LinearGrads g{Matrix(out, in), std::vector<double>(out, 0.0), Matrix(X.rows, in)};
    for (std::size_t i = 0; i < X.rows; ++i) {
        const double* x = X.data.data() + i * in;
        const double* gy = dY.data.data() + i * out;
        double* gx = g.dX.data.data() + i * in;
        for (std::size_t o = 0; o < out; ++o) {
            const double go = gy[o];
            if (go == 0.0) continue;
            g.db[o] += go;
            double* dw = g.dW.data.data() + o * in;
            const double* w = p.W.data.data() + o * in;
            for (std::size_t k = 0; k < in; ++k) {
                dw[k] += go * x[k];
                gx[k] += go * w[k];
            }
        }
    }
    return g;
}

namespace {

void check_bn(const BatchNormState& s, const Matrix& X, const char* who) {
    if (X.rows == 0) throw DomainError(std::string(who) + ": empty batch");
    if (X.cols != s.channels()) {
        throw ShapeError(std::string(who) + ": input " + shape_str(X.rows, X.cols) + " vs " +
                         std::to_string(s.channels()) + " channels");
    }
    if (!(s.eps > 0.0)) throw DomainError(std::string(who) + ": eps must be positive");
}

}  // namespace

Matrix batchnorm_apply(const BatchNormState& s, const Matrix& X, BnMode mode, BatchNormCache& cache) {
    check_bn(s, X, "batchnorm");
    const std::size_t n = X.rows;
    const std::size_t c = X.cols;
    cache.mode = mode;
    cache.batch = n;
    cache.xhat = Matrix(n, c);
    cache.inv_std.assign(c, 0.0);
    cache.batch_mean.assign(c, 0.0);
    cache.batch_var.assign(c, 0.0);

    std::vector<double> mean(c), var(c);
    if (mode == BnMode::train) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) mean[j] += X(i, j);
        for (auto& m : mean) m /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const double d = X(i, j) - mean[j];
                var[j] += d * d;
            }
        for (auto& v : var) v /= static_cast<double>(n);
        cache.batch_mean = mean;
        cache.batch_var = var;
    } else {
        mean = s.running_mean;
        var = s.running_var;
    }
    for (std::size_t j = 0; j < c; ++j) cache.inv_std[j] = 1.0 / std::sqrt(var[j] + s.eps);

    Matrix Y(n, c);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double xh = (X(i, j) - mean[j]) * cache.inv_std[j];
            cache.xhat(i, j) = xh;
            Y(i, j) = s.scale[j] * xh + s.shift[j];
        }
    return Y;
}

Matrix batchnorm_forward(BatchNormState& s, const Matrix& X, BatchNormCache* cache) {
    check_bn(s, X, "batchnorm_forward");
    BatchNormCache local;
    BatchNormCache& c = cache ? *cache : local;
    Matrix Y = batchnorm_apply(s, X, s.mode, c);
    if (s.mode == BnMode::train) batchnorm_update_running(s, c);
    return Y;
}

Matrix batchnorm_forward_deferred(const BatchNormState& s, const Matrix& X, BatchNormCache& cache) {
    check_bn(s, X, "batchnorm_forward");
    return batchnorm_apply(s, X, s.mode, cache);
}

void batchnorm_update_running(BatchNormState& s, const BatchNormCache& cache) {
    if (cache.mode != BnMode::train) return;
    const double n = static_cast<double>(cache.batch);
    const double unbias = cache.batch > 1 ? n / (n - 1.0) : 1.0;
    for (std::size_t j = 0; j < s.channels(); ++j) {
        s.running_mean[j] = (1.0 - s.momentum) * s.running_mean[j] + s.momentum * cache.batch_mean[j];
        s.running_var[j] = (1.0 - s.momentum) * s.running_var[j] + s.momentum * cache.batch_var[j] * unbias;
    }
}

BatchNormGrads batchnorm_backward(const BatchNormState& s, const BatchNormCache& cache, const Matrix& dY) {
    const std::size_t n = cache.xhat.rows;
    const std::size_t c = cache.xhat.cols;
    if (dY.rows != n || dY.cols != c) {
        throw ShapeError("batchnorm_backward: upstream " + shape_str(dY.rows, dY.cols) + " vs cached " +
                         shape_str(n, c));
    }
    BatchNormGrads g{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0), Matrix(n, c)};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            g.dscale[j] += dY(i, j) * cache.xhat(i, j);
            g.dshift[j] += dY(i, j);
        }
    if (cache.mode == BnMode::eval) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) g.dX(i, j) = dY(i, j) * s.scale[j] * cache.inv_std[j];
        return g;
    }
    // dxhat = dY * scale; dX = inv_std/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
    const double nd = static_cast<double>(n);
    for (std::size_t j = 0; j < c; ++j) {
        const double sum_dxhat = g.dshift[j] * s.scale[j];
        const double sum_dxhat_xhat = g.dscale[j] * s.scale[j];
        const double k = cache.inv_std[j] / nd;
        for (std::size_t i = 0; i < n; ++i) {
            const double dxhat = dY(i, j) * s.scale[j];
            g.dX(i, j) = k * (nd * dxhat - sum_dxhat - cache.xhat(i, j) * sum_dxhat_xhat);
        }
    }
    return g;
}

Matrix relu(const Matrix& X) {
    Matrix Y = X;
    for (auto& v : Y.data) v = v < 0.0 ? 0.0 : v;  // NaN passes through
    return Y;
}

Matrix relu_backward(const Matrix& X, const Matrix& dY) {
    if (X.rows != dY.rows || X.cols != dY.cols) {
        throw ShapeError("relu_backward: input " + shape_str(X.rows, X.cols) + " vs upstream " +
                         shape_str(dY.rows, dY.cols));
    }
    Matrix dX(X.rows, X.cols);
    for (std::size_t k = 0; k < X.data.size(); ++k) dX.data[k] = X.data[k] > 0.0 ? dY.data[k] : 0.0;
    return dX;
}

std::vector<double> softmax_temp(std::span<const double> v, double tau) {
    if (v.empty()) throw DomainError("softmax_temp: empty input");
    if (!(tau > 0.0)) throw DomainError("softmax_temp: temperature must be positive, got " + std::to_string(tau));
    const double vmax = *std::max_element(v.begin(), v.end());
    std::vector<double> w(v.size());
    double total = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        w[i] = std::exp((v[i] - vmax) / tau);
        total += w[i];
    }
    for (auto& x : w) x /= total;
    return w;
}

double grad_check(const std::function<double()>& loss, std::span<double> coords, std::span<const double> analytic,
                  double eps) {
    if (coords.size() != analytic.size()) {
        throw ShapeError("grad_check: " + std::to_string(coords.size()) + " coordinates vs " +
                         std::to_string(analytic.size()) + " analytic entries");
    }
    if (!(eps >= 1e-7 && eps <= 1e-3)) throw DomainError("grad_check: eps must lie in [1e-7, 1e-3]");
    double worst = 0.0;
    for (std::size_t k = 0; k < coords.size(); ++k) {
        const double saved = coords[k];
        coords[k] = saved + eps;
        const double up = loss();
        coords[k] = saved - eps;
        const double down = loss();
        coords[k] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw DomainError("grad_check: non-finite forward output at coordinate " + std::to_string(k));
        }
        const double numeric = (up - down) / (2.0 * eps);
        const double a = analytic[k];
        const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
        worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    return worst;
}

DenseBlockGrads::DenseBlockGrads(const DenseBlock& like)
    : linear(like.linear.in_dim(), like.linear.out_dim()),
      dscale(like.bn.channels(), 0.0),
      dshift(like.bn.channels(), 0.0) {}

void DenseBlockGrads::accumulate(const DenseBlockGrads& other) {
    for (std::size_t k = 0; k < linear.W.data.size(); ++k) linear.W.data[k] += other.linear.W.data[k];
    for (std::size_t k = 0; k < linear.b.size(); ++k) linear.b[k] += other.linear.b[k];
    for (std::size_t k = 0; k < dscale.size(); ++k) dscale[k] += other.dscale[k];
    for (std::size_t k = 0; k < dshift.size(); ++k) dshift[k] += other.dshift[k];
}

void DenseBlockGrads::scale_by(double f) {
    for (auto& v : linear.W.data) v *= f;
    for (auto& v : linear.b) v *= f;
    for (auto& v : dscale) v *= f;
    for (auto& v : dshift) v *= f;
}

Matrix dense_forward(const DenseBlock& block, const Matrix& X, BnMode bn_mode, DenseBlockCache& cache) {
    cache.input = X;
    cache.pre_bn = linear_forward(block.linear, X);
    cache.pre_relu = batchnorm_apply(block.bn, cache.pre_bn, bn_mode, cache.bn);
    return relu(cache.pre_relu);
}

Matrix dense_backward(const DenseBlock& block, const DenseBlockCache& cache, const Matrix& dY,
                      DenseBlockGrads& grads) {
    const Matrix d_pre_relu = relu_backward(cache.pre_relu, dY);
    BatchNormGrads bg = batchnorm_backward(block.bn, cache.bn, d_pre_relu);
    for (std::size_t j = 0; j < bg.dscale.size(); ++j) {
        grads.dscale[j] += bg.dscale[j];
        grads.dshift[j] += bg.dshift[j];
    }
    LinearGrads lg = linear_backward(block.linear, cache.input, bg.dX);
    for (std::size_t k = 0; k < lg.dW.data.size(); ++k) grads.linear.W.data[k] += lg.dW.data[k];
    for (std::size_t k = 0; k < lg.db.size(); ++k) grads.linear.b[k] += lg.db[k];
    return std::move(lg.dX);
}

void collect_slots(LinearParams& p, const LinearParams& g, std::vector<ParamSlot>& out) {
    out.push_back({p.W.data, g.W.data});
    out.push_back({p.b, g.b});
}

void collect_slots(DenseBlock& p, const DenseBlockGrads& g, std::vector<ParamSlot>& out) {
    collect_slots(p.linear, g.linear, out);
    out.push_back({p.bn.scale, g.dscale});
    out.push_back({p.bn.shift, g.dshift});
}

}  // namespace pdistill
