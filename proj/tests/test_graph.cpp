#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace pdistill;
using pdtest::random_matrix;

namespace {

Matrix line_coords(std::initializer_list<double> xs) {
    Matrix m(xs.size(), 2);
    std::size_t i = 0;
    for (const double x : xs) m(i++, 0) = x;
    return m;
}

GammaParams random_gamma(Rng& rng, std::size_t c, std::size_t out) {
    GammaParams p(c, out, GammaOwner::student);
    p.block = pdtest::random_block(rng, 2 * c, out);
    return p;
}

double dot(const Matrix& a, const Matrix& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

Matrix reference_conv(const Matrix& A, const NeighborLists& nbrs, const GammaParams& p, BnMode mode) {
    GraphConvCache cache;
    return graph_conv_forward(build_edge_features(A, nbrs), p, mode, cache);
}

}  // namespace

TEST(Knn, LineExample) {
    const Matrix c = line_coords({0, 1, 2, 10});
    for (const auto& nb : {knn_bruteforce(c, 2), knn_grid(c, 2)}) {
        EXPECT_EQ(nb.k, 2u);
        EXPECT_EQ(std::vector<std::size_t>(nb.of(0).begin(), nb.of(0).end()), (std::vector<std::size_t>{0, 1}));
        EXPECT_EQ(std::vector<std::size_t>(nb.of(3).begin(), nb.of(3).end()), (std::vector<std::size_t>{3, 2}));
    }
}

TEST(Knn, EquidistantTieGoesToLowerId) {
    const Matrix c = line_coords({0, 1, -1});  // node 0 is equidistant from 1 and 2
    EXPECT_EQ(knn_bruteforce(c, 2).of(0)[1], 1u);
    EXPECT_EQ(knn_grid(c, 2).of(0)[1], 1u);
    const Matrix d = line_coords({0, -1, 1});
    EXPECT_EQ(knn_bruteforce(d, 2).of(0)[1], 1u);
}

TEST(Knn, SingleNode) {
    const Matrix c = line_coords({3});
    const NeighborLists nb = knn_grid(c, 16);
    EXPECT_EQ(nb.k, 1u);
    EXPECT_EQ(nb.ids, std::vector<std::size_t>{0});
    EXPECT_EQ(knn_bruteforce(c, 16), nb);
}

TEST(Knn, FewerNodesThanK) {
    Rng rng(41);
    const Matrix c = random_matrix(rng, 5, 3);
    const NeighborLists nb = knn_grid(c, 8);
    EXPECT_EQ(nb.k, 5u);
    EXPECT_EQ(nb, knn_bruteforce(c, 8));
    for (std::size_t i = 0; i < 5; ++i) {
        const std::set<std::size_t> s(nb.of(i).begin(), nb.of(i).end());
        EXPECT_EQ(s.size(), 5u);
        EXPECT_EQ(nb.of(i)[0], i);
    }
}

TEST(Knn, BruteForceMatchesSortOracle) {
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = 2 + trial % 2;
        const Matrix c = trial % 3 ? random_matrix(rng, 150, d, 0.0, 5.0) : pdtest::clustered_coords(rng, 150, d, 3, true);
        const std::size_t K = 1 + rng.uniform_int(0, 20);
        EXPECT_EQ(knn_bruteforce(c, K), pdtest::knn_oracle(c, K));
    }
}

TEST(KnnProperty, GridEqualsBruteForce) {
    Rng rng(43);
    const std::size_t ks[] = {1, 8, 16, 64};
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t d = 2 + trial % 2;
        const std::size_t n = 1 + rng.uniform_int(0, 1500);
        const Matrix c = trial % 2 ? random_matrix(rng, n, d, -20.0, 20.0)
                                   : pdtest::clustered_coords(rng, n, d, 1 + rng.uniform_int(0, 5), trial % 4 == 0);
        const std::size_t K = ks[trial % 4];
        const NeighborLists brute = knn_bruteforce(c, K);
        EXPECT_EQ(knn_grid(c, K), brute) << "trial " << trial;
        EXPECT_EQ(knn_grid(c, K, 0.01), brute) << "tiny cells, trial " << trial;
        EXPECT_EQ(knn_grid(c, K, 100.0), brute) << "huge cells, trial " << trial;
        EXPECT_EQ(knn_grid(c, K, 0.0, 3), brute) << "threaded, trial " << trial;
    }
}

TEST(Knn, DegenerateAxesAndDuplicates) {
    Matrix c(300, 3);
    Rng rng(44);
    for (std::size_t i = 0; i < 300; ++i) {
        c(i, 0) = static_cast<double>(rng.uniform_int(0, 9));
        c(i, 1) = 2.0;  // flat axis
        c(i, 2) = static_cast<double>(rng.uniform_int(0, 3));
    }
    EXPECT_EQ(knn_grid(c, 16), knn_bruteforce(c, 16));
    const Matrix same(50, 3, 1.5);
    EXPECT_EQ(knn_grid(same, 8), knn_bruteforce(same, 8));
}

TEST(EdgeFeatures, SelfEdge) {
    NeighborLists nb{1, {0}};
    const EdgeTensor e = build_edge_features(Matrix(1, 2, {3.0, -4.0}), nb);
    EXPECT_EQ(e.edges, Matrix(1, 4, {3.0, -4.0, 3.0, -4.0}));
}

TEST(EdgeFeatures, IdenticalRowsGiveIdenticalEdges) {
    const Matrix A(5, 3, 0.7);
    Rng rng(45);
    const EdgeTensor e = build_edge_features(A, knn_bruteforce(random_matrix(rng, 5, 3), 3));
    for (std::size_t r = 1; r < e.edges.rows; ++r)
        for (std::size_t c = 0; c < e.edges.cols; ++c) EXPECT_EQ(e.edges(r, c), e.edges(0, c));
}

TEST(EdgeFeatures, EntriesMatchDirectLookup) {
    Rng rng(46);
    const Matrix A = random_matrix(rng, 20, 4);
    const NeighborLists nb = knn_bruteforce(random_matrix(rng, 20, 3), 5);
    const EdgeTensor e = build_edge_features(A, nb);
    ASSERT_EQ(e.edges.rows, 100u);
    for (std::size_t i = 0; i < 20; ++i)
        for (std::size_t j = 0; j < 5; ++j)
            for (std::size_t c = 0; c < 4; ++c) {
                EXPECT_EQ(e.edges(i * 5 + j, c), A(i, c));
                EXPECT_EQ(e.edges(i * 5 + j, 4 + c), A(nb.of(i)[j], c));
            }
}

TEST(EdgeFeatures, MismatchRejected) {
    NeighborLists nb{2, {0, 1, 1, 0}};
    EXPECT_THROW(build_edge_features(Matrix(3, 2), nb), ShapeError);
}

TEST(GraphConv, SingleEdgePoolingIsActivation) {
    Rng rng(47);
    const GammaParams p = random_gamma(rng, 3, 4);
    const Matrix A = random_matrix(rng, 1, 3);
    NeighborLists nb{1, {0}};
    const EdgeTensor e = build_edge_features(A, nb);
    DenseBlockCache c;
    const Matrix act = dense_forward(p.block, e.edges, BnMode::eval, c);
    EXPECT_EQ(reference_conv(A, nb, p, BnMode::eval), act);
}

TEST(GraphConv, IdenticalNeighborsGiveSelfActivation) {
    Rng rng(48);
    const GammaParams p = random_gamma(rng, 2, 3);
    Matrix A(4, 2);
    for (std::size_t i = 0; i < 4; ++i) A(i, 0) = 0.3, A(i, 1) = -0.2;
    NeighborLists nb{1, {0, 1, 2, 3}};
    const Matrix single = reference_conv(A, nb, p, BnMode::eval);
    const Matrix full = reference_conv(A, knn_bruteforce(random_matrix(rng, 4, 2), 4), p, BnMode::eval);
    EXPECT_EQ(full, single);
}

TEST(GraphConv, ReferenceBackwardMatchesFiniteDifferences) {
    Rng rng(49);
    GammaParams p = random_gamma(rng, 4, 5);
    Matrix A = random_matrix(rng, 6, 4);
    const NeighborLists nb = knn_bruteforce(random_matrix(rng, 6, 3), 3);
    const Matrix R = random_matrix(rng, 6, 5);
    for (const BnMode mode : {BnMode::eval, BnMode::train}) {
        GraphConvCache cache;
        graph_conv_forward(build_edge_features(A, nb), p, mode, cache);
        DenseBlockGrads grads(p.block);
        const Matrix dE = graph_conv_backward(p, cache, R, grads);
        const Matrix dA = edge_grad_to_features(dE, nb);
        auto loss = [&] { return dot(reference_conv(A, nb, p, mode), R); };
        EXPECT_LT(grad_check(loss, A.data, dA.data, 1e-6), 1e-4);
        EXPECT_LT(grad_check(loss, p.block.linear.W.data, grads.linear.W.data, 1e-6), 1e-4);
        EXPECT_LT(grad_check(loss, p.block.linear.b, grads.linear.b, 1e-6), 1e-4);
        EXPECT_LT(grad_check(loss, p.block.bn.scale, grads.dscale, 1e-6), 1e-4);
        EXPECT_LT(grad_check(loss, p.block.bn.shift, grads.dshift, 1e-6), 1e-4);
    }
}

TEST(GraphConv, FusedEqualsReference) {
    Rng rng(50);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 5 + rng.uniform_int(0, 60), c = 1 + rng.uniform_int(0, 6), out = 1 + rng.uniform_int(0, 6);
        const GammaParams p = random_gamma(rng, c, out);
        const Matrix A = random_matrix(rng, n, c);
        const NeighborLists nb = knn_bruteforce(random_matrix(rng, n, 3), 1 + rng.uniform_int(0, 8));
        const Matrix R = random_matrix(rng, n, out);
        for (const BnMode mode : {BnMode::eval, BnMode::train}) {
            GraphConvCache rc;
            const Matrix ref = graph_conv_forward(build_edge_features(A, nb), p, mode, rc);
            FusedGraphCache fc;
            const Matrix fused = graph_conv_forward_fused(A, nb, p, mode, fc);
            ASSERT_EQ(fused.rows, ref.rows);
            for (std::size_t i = 0; i < ref.data.size(); ++i) EXPECT_NEAR(fused.data[i], ref.data[i], 1e-10);

            DenseBlockGrads rg(p.block), fg(p.block);
            const Matrix dA_ref = edge_grad_to_features(graph_conv_backward(p, rc, R, rg), nb);
            const Matrix dA_fused = graph_conv_backward_fused(p, fc, R, fg);
            for (std::size_t i = 0; i < dA_ref.data.size(); ++i) EXPECT_NEAR(dA_fused.data[i], dA_ref.data[i], 1e-9);
            for (std::size_t i = 0; i < rg.linear.W.data.size(); ++i)
                EXPECT_NEAR(fg.linear.W.data[i], rg.linear.W.data[i], 1e-9);
            for (std::size_t i = 0; i < out; ++i) {
                EXPECT_NEAR(fg.dscale[i], rg.dscale[i], 1e-9);
                EXPECT_NEAR(fg.dshift[i], rg.dshift[i], 1e-9);
            }
        }
    }
}

TEST(GraphConvProperty, NeighborOrderInvariance) {
    Rng rng(51);
    for (int trial = 0; trial < 20; ++trial) {
        const GammaParams p = random_gamma(rng, 3, 4);
        const Matrix A = random_matrix(rng, 30, 3);
        NeighborLists nb = knn_bruteforce(random_matrix(rng, 30, 3), 6);
        const Matrix base = reference_conv(A, nb, p, BnMode::eval);
        for (std::size_t i = 0; i < nb.nodes(); ++i) {
            auto* row = nb.ids.data() + i * nb.k;
            for (std::size_t j = nb.k - 1; j > 1; --j) std::swap(row[j], row[1 + rng.uniform_int(0, j - 1)]);
        }
        EXPECT_EQ(reference_conv(A, nb, p, BnMode::eval), base);
        FusedGraphCache fc;
        const Matrix fused = graph_conv_forward_fused(A, nb, p, BnMode::eval, fc);
        for (std::size_t i = 0; i < base.data.size(); ++i) EXPECT_NEAR(fused.data[i], base.data[i], 1e-12);
    }
}

TEST(GraphConvProperty, OutputDependsOnlyOnOwnList) {
    Rng rng(52);
    const GammaParams p = random_gamma(rng, 3, 4);
    Matrix A = random_matrix(rng, 40, 3);
    const NeighborLists nb = knn_bruteforce(random_matrix(rng, 40, 3), 4);
    const Matrix base = reference_conv(A, nb, p, BnMode::eval);
    const std::set<std::size_t> mine(nb.of(0).begin(), nb.of(0).end());
    for (std::size_t r = 0; r < 40; ++r)
        if (!mine.count(r))
            for (std::size_t c = 0; c < 3; ++c) A(r, c) += rng.uniform(-2.0, 2.0);
    const Matrix moved = reference_conv(A, nb, p, BnMode::eval);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(moved(0, c), base(0, c));
}

TEST(GraphConv, GradientReachesListedNodes) {
    Rng rng(53);
    GammaParams p = random_gamma(rng, 3, 6);
    for (double& s : p.block.bn.shift) s = 1.0;  // keep most edges active
    Matrix A = random_matrix(rng, 12, 3);
    const NeighborLists nb = knn_bruteforce(random_matrix(rng, 12, 2), 4);
    FusedGraphCache fc;
    const Matrix G = graph_conv_forward_fused(A, nb, p, BnMode::eval, fc);
    DenseBlockGrads g(p.block);
    const Matrix dA = graph_conv_backward_fused(p, fc, Matrix(G.rows, G.cols, 1.0), g);
    auto loss = [&] {
        FusedGraphCache c;
        const Matrix out = graph_conv_forward_fused(A, nb, p, BnMode::eval, c);
        double s = 0.0;
        for (const double v : out.data) s += v;
        return s;
    };
    EXPECT_LT(grad_check(loss, A.data, dA.data, 1e-6), 1e-6);
    for (std::size_t i = 0; i < 12; ++i) {
        double norm = 0.0;
        for (const double v : dA.row(i)) norm += v * v;
        EXPECT_GT(norm, 0.0) << "node " << i;
    }
}
