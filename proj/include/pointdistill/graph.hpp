#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pointdistill/numerics.hpp"

namespace pdistill {

/// Row i lists node i first, then its K'-1 nearest other nodes by (squared distance, id).
struct NeighborLists {
    std::size_t k = 0;              // effective list length, min(K, N)
    std::vector<std::size_t> ids;   // nodes() * k, row-major

    std::size_t nodes() const { return k == 0 ? 0 : ids.size() / k; }
    std::span<const std::size_t> of(std::size_t i) const { return {ids.data() + i * k, k}; }

    friend bool operator==(const NeighborLists&, const NeighborLists&) = default;
};

/// Exact O(N^2) KNN over the rows of `coords` (N x d, d in 1..3).
NeighborLists knn_bruteforce(const Matrix& coords, std::size_t K, std::size_t workers = 1);

/// Uniform-grid KNN with ring expansion. Output is identical to knn_bruteforce.
/// `cell_size` <= 0 selects default_cell_size.
NeighborLists knn_grid(const Matrix& coords, std::size_t K, double cell_size = 0.0, std::size_t workers = 1);

/// (bounding volume * K / N)^(1/d) over the non-degenerate axes.
double default_cell_size(const Matrix& coords, std::size_t K);

/// Centroid-concatenated edge features; row i*k + j holds cat(z_i, z_{nbr(i,j)}).
struct EdgeTensor {
    std::size_t nodes = 0;
    std::size_t k = 0;
    Matrix edges;  // (nodes*k) x 2C

    std::size_t width() const { return edges.cols; }
};

EdgeTensor build_edge_features(const Matrix& A, const NeighborLists& nbrs);

enum class GammaOwner { student, teacher };

/// The aggregator: a shared linear + batch norm + ReLU edge map, max-pooled per node.
struct GammaParams {
    DenseBlock block;
    GammaOwner owner = GammaOwner::student;

    GammaParams() = default;
    GammaParams(std::size_t feature_width, std::size_t out, GammaOwner who)
        : block(2 * feature_width, out), owner(who) {}

    std::size_t feature_width() const { return block.linear.in_dim() / 2; }
    std::size_t out_dim() const { return block.linear.out_dim(); }

    friend bool operator==(const GammaParams&, const GammaParams&) = default;
};

struct GraphConvCache {
    DenseBlockCache dense;
    std::size_t nodes = 0;
    std::size_t k = 0;
    std::vector<std::uint32_t> argmax;  // nodes x C_out, winning edge slot
};

/// G[i, c] = max_j ReLU(BN(W e_ij + b))[c].
Matrix graph_conv_forward(const EdgeTensor& E, const GammaParams& p, BnMode bn_mode, GraphConvCache& cache);
/// Returns dL/dE and accumulates parameter gradients.
Matrix graph_conv_backward(const GammaParams& p, const GraphConvCache& cache, const Matrix& dG,
                           DenseBlockGrads& grads);
/// Folds edge gradients back onto node features through centroid and neighbor slots.
Matrix edge_grad_to_features(const Matrix& dE, const NeighborLists& nbrs);

/// Same result as build_edge_features + graph_conv_forward without materializing the edge
/// tensor: W cat(z_i, z_j) = W_c z_i + W_n z_j, so the linear map runs once per node.
struct FusedGraphCache {
    Matrix A;
    NeighborLists nbrs;
    BatchNormCache bn;
    Matrix pre_relu;
    std::vector<std::uint32_t> argmax;
};

Matrix graph_conv_forward_fused(const Matrix& A, const NeighborLists& nbrs, const GammaParams& p, BnMode bn_mode,
                                FusedGraphCache& cache);
/// Returns dL/dA and accumulates parameter gradients.
Matrix graph_conv_backward_fused(const GammaParams& p, const FusedGraphCache& cache, const Matrix& dG,
                                 DenseBlockGrads& grads);

}  // namespace pdistill
