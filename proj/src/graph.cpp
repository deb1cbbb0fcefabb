#include "pointdistill/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <string>
#include <utility>

#include "pointdistill/errors.hpp"
#include "pointdistill/parallel.hpp"

namespace pdistill {

namespace {

using Candidate = std::pair<double, std::size_t>;  // (squared distance, id); lexicographic order

double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        const double diff = a[k] - b[k];
        s += diff * diff;
    }
    return s;
}

void check_coords(const Matrix& coords, std::size_t K, const char* who) {
    if (coords.rows == 0) throw DomainError(std::string(who) + ": no points");
    if (K == 0) throw DomainError(std::string(who) + ": K must be at least 1");
    if (coords.cols < 1 || coords.cols > 3) {
        throw ShapeError(std::string(who) + ": coordinates " + shape_str(coords.rows, coords.cols) +
                         " must have 1 to 3 columns");
    }
}

NeighborLists make_lists(std::size_t n, std::size_t K) {
    NeighborLists out;
    out.k = std::min(K, n);
    out.ids.assign(n * out.k, 0);
    return out;
}

}  // namespace

NeighborLists knn_bruteforce(const Matrix& coords, std::size_t K, std::size_t workers) {
    check_coords(coords, K, "knn_bruteforce");
    const std::size_t n = coords.rows;
    const std::size_t d = coords.cols;
    NeighborLists out = make_lists(n, K);
    const std::size_t m = out.k - 1;

    parallel_for(n, workers, [&](std::size_t begin, std::size_t end) {
        std::vector<Candidate> cand;
        cand.reserve(n);
        for (std::size_t i = begin; i < end; ++i) {
            std::size_t* row = out.ids.data() + i * out.k;
            row[0] = i;
            if (m == 0) continue;
            cand.clear();
            const double* q = coords.data.data() + i * d;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                cand.emplace_back(sq_dist(q, coords.data.data() + j * d, d), j);
            }
            std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(m), cand.end());
            for (std::size_t t = 0; t < m; ++t) row[t + 1] = cand[t].second;
        }
    });
    return out;
}

double default_cell_size(const Matrix& coords, std::size_t K) {
    const std::size_t d = coords.cols;
    double lo[3] = {0, 0, 0}, hi[3] = {0, 0, 0};
    for (std::size_t a = 0; a < d; ++a) {
        lo[a] = std::numeric_limits<double>::infinity();
        hi[a] = -std::numeric_limits<double>::infinity();
    }
    for (std::size_t i = 0; i < coords.rows; ++i)
        for (std::size_t a = 0; a < d; ++a) {
            lo[a] = std::min(lo[a], coords(i, a));
            hi[a] = std::max(hi[a], coords(i, a));
        }
    double volume = 1.0;
    int live = 0;
    for (std::size_t a = 0; a < d; ++a) {
        const double ext = hi[a] - lo[a];
        if (ext > 0.0) {
            volume *= ext;
            ++live;
        }
    }
    if (live == 0 || coords.rows == 0) return 1.0;
    const double per_cell = volume * static_cast<double>(std::max<std::size_t>(K, 1)) / static_cast<double>(coords.rows);
    const double cs = std::pow(per_cell, 1.0 / live);
    return cs > 0.0 && std::isfinite(cs) ? cs : 1.0;
}

namespace {

/// Counting-sorted uniform grid over the point set.
struct UniformGrid {
    std::size_t d = 0;
    double cell = 1.0;
    double lo[3] = {0, 0, 0};
    std::int64_t dims[3] = {1, 1, 1};
    std::vector<std::size_t> start;   // ncells + 1
    std::vector<std::size_t> items;   // point ids, ascending within a cell
    std::vector<std::int64_t> home;   // per point, packed cell coords (3 x int64)

    std::int64_t axis_index(double v, std::size_t a) const {
        const auto k = static_cast<std::int64_t>(std::floor((v - lo[a]) / cell));
        return std::clamp<std::int64_t>(k, 0, dims[a] - 1);
    }

    std::size_t linear(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return static_cast<std::size_t>((z * dims[1] + y) * dims[0] + x);
    }

    void build(const Matrix& coords, double cell_size) {
        d = coords.cols;
        const std::size_t n = coords.rows;
        double hi[3] = {0, 0, 0};
        for (std::size_t a = 0; a < d; ++a) {
            lo[a] = std::numeric_limits<double>::infinity();
            hi[a] = -std::numeric_limits<double>::infinity();
        }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t a = 0; a < d; ++a) {
                lo[a] = std::min(lo[a], coords(i, a));
                hi[a] = std::max(hi[a], coords(i, a));
            }
        cell = cell_size;
        const double max_cells = std::max(64.0, 8.0 * static_cast<double>(n));
        for (;;) {
            double total = 1.0;
            for (std::size_t a = 0; a < 3; ++a) {
                dims[a] = a < d ? static_cast<std::int64_t>(std::floor((hi[a] - lo[a]) / cell)) + 1 : 1;
                total *= static_cast<double>(dims[a]);
            }
            if (total <= max_cells) break;
            cell *= 1.5;
        }
        const std::size_t ncells = static_cast<std::size_t>(dims[0] * dims[1] * dims[2]);
        start.assign(ncells + 1, 0);
        home.assign(n * 3, 0);
        std::vector<std::size_t> cell_of(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::int64_t c[3] = {0, 0, 0};
            for (std::size_t a = 0; a < d; ++a) c[a] = axis_index(coords(i, a), a);
            std::copy(c, c + 3, home.begin() + static_cast<std::ptrdiff_t>(i * 3));
            cell_of[i] = linear(c[0], c[1], c[2]);
            ++start[cell_of[i] + 1];
        }
        for (std::size_t c = 0; c < ncells; ++c) start[c + 1] += start[c];
        items.assign(n, 0);
        std::vector<std::size_t> fill(start.begin(), start.end() - 1);
        for (std::size_t i = 0; i < n; ++i) items[fill[cell_of[i]]++] = i;
    }

    std::int64_t max_ring() const { return std::max({dims[0], dims[1], dims[2]}); }

    /// Visits every in-range cell at Chebyshev distance exactly r from `c`.
    template <class F>
    void for_ring(const std::int64_t* c, std::int64_t r, F&& visit) const {
        const std::int64_t zr = d >= 3 ? r : 0;
        const std::int64_t yr = d >= 2 ? r : 0;
        for (std::int64_t dz = -zr; dz <= zr; ++dz) {
            const std::int64_t z = c[2] + dz;
            if (z < 0 || z >= dims[2]) continue;
            for (std::int64_t dy = -yr; dy <= yr; ++dy) {
                const std::int64_t y = c[1] + dy;
                if (y < 0 || y >= dims[1]) continue;
                const bool shell = std::abs(dz) == r || std::abs(dy) == r;
                if (shell) {
                    for (std::int64_t dx = -r; dx <= r; ++dx) {
                        const std::int64_t x = c[0] + dx;
                        if (x >= 0 && x < dims[0]) visit(linear(x, y, z));
                    }
                } else {
                    if (c[0] - r >= 0) visit(linear(c[0] - r, y, z));
                    if (r != 0 && c[0] + r < dims[0]) visit(linear(c[0] + r, y, z));
                }
            }
        }
    }
};

}  // namespace

NeighborLists knn_grid(const Matrix& coords, std::size_t K, double cell_size, std::size_t workers) {
    check_coords(coords, K, "knn_grid");
    const std::size_t n = coords.rows;
    const std::size_t d = coords.cols;
    NeighborLists out = make_lists(n, K);
    const std::size_t m = out.k - 1;
    if (!(cell_size > 0.0)) cell_size = default_cell_size(coords, K);

    UniformGrid grid;
    grid.build(coords, cell_size);
    const std::int64_t last_ring = grid.max_ring();

    parallel_for(n, workers, [&](std::size_t begin, std::size_t end) {
        std::vector<Candidate> heap;  // max-heap on (dist, id): worst kept candidate on top
        heap.reserve(m + 1);
        for (std::size_t i = begin; i < end; ++i) {
            std::size_t* row = out.ids.data() + i * out.k;
            row[0] = i;
            if (m == 0) continue;
            heap.clear();
            const double* q = coords.data.data() + i * d;
            const std::int64_t* c = grid.home.data() + i * 3;
            for (std::int64_t r = 0; r <= last_ring; ++r) {
                grid.for_ring(c, r, [&](std::size_t cell) {
                    for (std::size_t t = grid.start[cell]; t < grid.start[cell + 1]; ++t) {
                        const std::size_t j = grid.items[t];
                        if (j == i) continue;
                        const Candidate cand{sq_dist(q, coords.data.data() + j * d, d), j};
                        if (heap.size() < m) {
                            heap.push_back(cand);
                            std::push_heap(heap.begin(), heap.end());
                        } else if (cand < heap.front()) {
                            std::pop_heap(heap.begin(), heap.end());
                            heap.back() = cand;
                            std::push_heap(heap.begin(), heap.end());
                        }
                    }
                });
                // Cells at ring r+1 or beyond lie at least r cells away from q along some axis.
                // The certificate must be strict so an equal-distance lower id cannot be missed.
                if (heap.size() == m) {
                    const double bound = static_cast<double>(r) * grid.cell * (1.0 - 1e-9);
                    if (heap.front().first < bound * bound) break;
                }
            }
            std::sort_heap(heap.begin(), heap.end());
            for (std::size_t t = 0; t < m; ++t) row[t + 1] = heap[t].second;
        }
    });
    return out;
}

EdgeTensor build_edge_features(const Matrix& A, const NeighborLists& nbrs) {
    if (nbrs.nodes() != A.rows) {
        throw ShapeError("build_edge_features: " + std::to_string(nbrs.nodes()) + " neighbor lists vs features " +
                         shape_str(A.rows, A.cols));
    }
    const std::size_t c = A.cols;
    EdgeTensor E;
    E.nodes = A.rows;
    E.k = nbrs.k;
    E.edges = Matrix(E.nodes * E.k, 2 * c);
    for (std::size_t i = 0; i < E.nodes; ++i) {
        const auto centroid = A.row(i);
        const auto list = nbrs.of(i);
        for (std::size_t j = 0; j < E.k; ++j) {
            if (list[j] >= A.rows) throw ShapeError("build_edge_features: neighbor id out of range");
            auto edge = E.edges.row(i * E.k + j);
            std::copy(centroid.begin(), centroid.end(), edge.begin());
            const auto other = A.row(list[j]);
            std::copy(other.begin(), other.end(), edge.begin() + static_cast<std::ptrdiff_t>(c));
        }
    }
    return E;
}

namespace {

Matrix max_pool(const Matrix& act, std::size_t nodes, std::size_t k, std::vector<std::uint32_t>& argmax) {
    const std::size_t cout = act.cols;
    Matrix G(nodes, cout);
    argmax.assign(nodes * cout, 0);
    for (std::size_t i = 0; i < nodes; ++i) {
        auto g = G.row(i);
        const auto first = act.row(i * k);
        std::copy(first.begin(), first.end(), g.begin());
        std::uint32_t* am = argmax.data() + i * cout;
        for (std::size_t j = 1; j < k; ++j) {
            const auto e = act.row(i * k + j);
            for (std::size_t ch = 0; ch < cout; ++ch) {
                if (e[ch] > g[ch] || std::isnan(e[ch])) {
                    g[ch] = e[ch];
                    am[ch] = static_cast<std::uint32_t>(j);
                }
            }
        }
    }
    return G;
}

/// dL/d(pre-ReLU edge activations) from dL/dG through the max and the ReLU.
Matrix unpool_relu(const Matrix& pre_relu, const std::vector<std::uint32_t>& argmax, const Matrix& dG,
                   std::size_t k) {
    const std::size_t cout = pre_relu.cols;
    Matrix d(pre_relu.rows, cout);
    for (std::size_t i = 0; i < dG.rows; ++i)
        for (std::size_t ch = 0; ch < cout; ++ch) {
            const std::size_t row = i * k + argmax[i * cout + ch];
            if (pre_relu(row, ch) > 0.0) d(row, ch) = dG(i, ch);
        }
    return d;
}

void check_pool_grad(const Matrix& dG, std::size_t nodes, std::size_t cout, const char* who) {
    if (dG.rows != nodes || dG.cols != cout) {
        throw ShapeError(std::string(who) + ": upstream " + shape_str(dG.rows, dG.cols) + " vs graph features " +
                         shape_str(nodes, cout));
    }
}

}  // namespace

Matrix graph_conv_forward(const EdgeTensor& E, const GammaParams& p, BnMode bn_mode, GraphConvCache& cache) {
    if (E.width() != p.block.linear.in_dim()) {
        throw ShapeError("graph_conv_forward: edges " + shape_str(E.edges.rows, E.edges.cols) + " vs aggregator " +
                         shape_str(p.out_dim(), p.block.linear.in_dim()));
    }
    if (E.nodes == 0 || E.k == 0) throw DomainError("graph_conv_forward: empty graph");
    cache.nodes = E.nodes;
    cache.k = E.k;
    const Matrix act = dense_forward(p.block, E.edges, bn_mode, cache.dense);
    return max_pool(act, E.nodes, E.k, cache.argmax);
}

Matrix graph_conv_backward(const GammaParams& p, const GraphConvCache& cache, const Matrix& dG,
                           DenseBlockGrads& grads) {
    check_pool_grad(dG, cache.nodes, p.out_dim(), "graph_conv_backward");
    const Matrix d_act = unpool_relu(cache.dense.pre_relu, cache.argmax, dG, cache.k);
    // d_act is already masked by the ReLU, and relu_backward inside dense_backward masks again (idempotent).
    return dense_backward(p.block, cache.dense, d_act, grads);
}

Matrix edge_grad_to_features(const Matrix& dE, const NeighborLists& nbrs) {
    const std::size_t n = nbrs.nodes();
    const std::size_t c = dE.cols / 2;
    if (dE.rows != n * nbrs.k || dE.cols % 2 != 0) {
        throw ShapeError("edge_grad_to_features: edge gradient " + shape_str(dE.rows, dE.cols) + " vs " +
                         std::to_string(n) + " lists of " + std::to_string(nbrs.k));
    }
    Matrix dA(n, c);
    for (std::size_t i = 0; i < n; ++i) {
        const auto list = nbrs.of(i);
        for (std::size_t j = 0; j < nbrs.k; ++j) {
            const auto e = dE.row(i * nbrs.k + j);
            auto self = dA.row(i);
            auto other = dA.row(list[j]);
            for (std::size_t ch = 0; ch < c; ++ch) {
                self[ch] += e[ch];
                other[ch] += e[c + ch];
            }
        }
    }
    return dA;
}

namespace {

/// Splits W = [W_c | W_n]; the bias stays with the centroid half.
std::pair<LinearParams, LinearParams> split_halves(const LinearParams& lin) {
    const std::size_t c = lin.in_dim() / 2;
    const std::size_t out = lin.out_dim();
    LinearParams centroid(c, out), neighbor(c, out);
    for (std::size_t o = 0; o < out; ++o)
        for (std::size_t k = 0; k < c; ++k) {
            centroid.W(o, k) = lin.W(o, k);
            neighbor.W(o, k) = lin.W(o, c + k);
        }
    centroid.b = lin.b;
    return {std::move(centroid), std::move(neighbor)};
}

}  // namespace

Matrix graph_conv_forward_fused(const Matrix& A, const NeighborLists& nbrs, const GammaParams& p, BnMode bn_mode,
                                FusedGraphCache& cache) {
    if (2 * A.cols != p.block.linear.in_dim()) {
        throw ShapeError("graph_conv_forward: features " + shape_str(A.rows, A.cols) + " vs aggregator " +
                         shape_str(p.out_dim(), p.block.linear.in_dim()));
    }
    if (nbrs.nodes() != A.rows) {
        throw ShapeError("graph_conv_forward: " + std::to_string(nbrs.nodes()) + " neighbor lists vs features " +
                         shape_str(A.rows, A.cols));
    }
    if (A.rows == 0) throw DomainError("graph_conv_forward: empty graph");
    const auto [centroid, neighbor] = split_halves(p.block.linear);
    const Matrix P = linear_forward(centroid, A);
    const Matrix Q = linear_forward(neighbor, A);
    const std::size_t n = A.rows;
    const std::size_t k = nbrs.k;
    const std::size_t cout = p.out_dim();
    Matrix pre_bn(n * k, cout);
    for (std::size_t i = 0; i < n; ++i) {
        const auto list = nbrs.of(i);
        const auto pi = P.row(i);
        for (std::size_t j = 0; j < k; ++j) {
            auto y = pre_bn.row(i * k + j);
            const auto qj = Q.row(list[j]);
            for (std::size_t ch = 0; ch < cout; ++ch) y[ch] = pi[ch] + qj[ch];
        }
    }
    cache.A = A;
    cache.nbrs = nbrs;
    cache.pre_relu = batchnorm_apply(p.block.bn, pre_bn, bn_mode, cache.bn);
    return max_pool(relu(cache.pre_relu), n, k, cache.argmax);
}

Matrix graph_conv_backward_fused(const GammaParams& p, const FusedGraphCache& cache, const Matrix& dG,
                                 DenseBlockGrads& grads) {
    const std::size_t n = cache.A.rows;
    const std::size_t k = cache.nbrs.k;
    const std::size_t c = cache.A.cols;
    const std::size_t cout = p.out_dim();
    check_pool_grad(dG, n, cout, "graph_conv_backward");

    const Matrix d_pre_relu = unpool_relu(cache.pre_relu, cache.argmax, dG, k);
    BatchNormGrads bg = batchnorm_backward(p.block.bn, cache.bn, d_pre_relu);
    for (std::size_t ch = 0; ch < cout; ++ch) {
        grads.dscale[ch] += bg.dscale[ch];
        grads.dshift[ch] += bg.dshift[ch];
    }
    // Fold edge rows: dP[i] = sum_j d(i,j), dQ[nbr(i,j)] += d(i,j).
    Matrix dP(n, cout), dQ(n, cout);
    for (std::size_t i = 0; i < n; ++i) {
        const auto list = cache.nbrs.of(i);
        auto dp = dP.row(i);
        for (std::size_t j = 0; j < k; ++j) {
            const auto e = bg.dX.row(i * k + j);
            auto dq = dQ.row(list[j]);
            for (std::size_t ch = 0; ch < cout; ++ch) {
                dp[ch] += e[ch];
                dq[ch] += e[ch];
            }
        }
    }
    const auto [centroid, neighbor] = split_halves(p.block.linear);
    LinearGrads gc = linear_backward(centroid, cache.A, dP);
    LinearGrads gn = linear_backward(neighbor, cache.A, dQ);
    for (std::size_t o = 0; o < cout; ++o) {
        for (std::size_t t = 0; t < c; ++t) {
            grads.linear.W(o, t) += gc.dW(o, t);
            grads.linear.W(o, c + t) += gn.dW(o, t);
        }
        grads.linear.b[o] += gc.db[o];
    }
    for (std::size_t t = 0; t < gc.dX.data.size(); ++t) gc.dX.data[t] += gn.dX.data[t];
    return std::move(gc.dX);
}

}  // namespace pdistill
