#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "support.hpp"

using namespace pdistill;
using pdtest::random_matrix;
namespace fs = std::filesystem;

namespace {

double dot(const Matrix& a, const Matrix& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

fs::path temp_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("pointdistill_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

TeacherConfig quick_teacher(TeacherMode mode, std::uint64_t seed) {
    TeacherConfig t;
    t.mode = mode;
    t.seed = seed;
    t.widths = {16, 12};
    t.steps = 40;
    t.scenes = 2;
    t.scene = pdtest::small_scene(0);
    t.grid = pdtest::small_grid();
    return t;
}

}  // namespace

TEST(Encoder, ZeroWeightsGiveZeroFeatures) {
    EncoderParams p;
    p.layers.emplace_back(4, 3);
    Rng rng(61);
    EXPECT_EQ(encoder_forward(p, random_matrix(rng, 5, 4), BnMode::eval), Matrix(5, 3));
}

TEST(Encoder, IdentityLayerIsRelu) {
    EncoderParams p;
    p.layers.emplace_back(3, 3);
    p.layers[0].linear.W = Matrix::identity(3);
    p.layers[0].bn.running_var.assign(3, 1.0 - p.layers[0].bn.eps);
    Rng rng(62);
    const Matrix X = random_matrix(rng, 6, 3);
    const Matrix Y = encoder_forward(p, X, BnMode::eval);
    const Matrix R = relu(X);
    for (std::size_t i = 0; i < Y.data.size(); ++i) EXPECT_NEAR(Y.data[i], R.data[i], 1e-15);
}

TEST(Encoder, ShapeMismatchAndEmptyWidths) {
    Rng rng(63);
    const EncoderParams p = make_encoder(8, {4}, rng);
    EXPECT_THROW(encoder_forward(p, Matrix(2, 5), BnMode::eval), ShapeError);
    EXPECT_THROW(make_encoder(8, {}, rng), DomainError);
}

TEST(Encoder, TwoLayerBackwardMatchesFiniteDifferences) {
    Rng rng(64);
    EncoderParams p;
    p.layers.push_back(pdtest::random_block(rng, 5, 7));
    p.layers.push_back(pdtest::random_block(rng, 7, 3));
    Matrix X = random_matrix(rng, 9, 5);
    const Matrix R = random_matrix(rng, 9, 3);
    for (const BnMode mode : {BnMode::eval, BnMode::train}) {
        EncoderCache cache;
        encoder_forward(p, X, mode, &cache);
        EncoderGrads g(p);
        const Matrix dX = encoder_backward(p, cache, R, g);
        auto loss = [&] { return dot(encoder_forward(p, X, mode), R); };
        EXPECT_LT(grad_check(loss, X.data, dX.data, 1e-6), 1e-4);
        for (std::size_t l = 0; l < 2; ++l) {
            EXPECT_LT(grad_check(loss, p.layers[l].linear.W.data, g.layers[l].linear.W.data, 1e-6), 1e-4);
            EXPECT_LT(grad_check(loss, p.layers[l].bn.scale, g.layers[l].dscale, 1e-6), 1e-4);
        }
    }
}

TEST(Encoder, ForwardLeavesRunningStatsAlone) {
    Rng rng(65);
    const EncoderParams p = make_encoder(8, {6, 4}, rng);
    EncoderParams q = p;
    EncoderCache cache;
    encoder_forward(q, random_matrix(rng, 10, 8), BnMode::train, &cache);
    EXPECT_EQ(q, p);
    apply_running_stats(q, cache);
    EXPECT_NE(param_hash(q), param_hash(p));
}

TEST(Teacher, SameSeedIdenticalParams) {
    for (const TeacherMode mode : {TeacherMode::frozen_random, TeacherMode::proxy_trained}) {
        const TeacherArtifact a = make_teacher(quick_teacher(mode, 5));
        const TeacherArtifact b = make_teacher(quick_teacher(mode, 5));
        EXPECT_EQ(a.params(), b.params());
        EXPECT_NE(param_hash(a.params()), param_hash(make_teacher(quick_teacher(mode, 6)).params()));
        for (const auto& l : a.params().layers) EXPECT_EQ(l.bn.mode, BnMode::eval);
    }
}

TEST(Teacher, FrozenRandomHasUnitStats) {
    const TeacherArtifact t = make_teacher(quick_teacher(TeacherMode::frozen_random, 1));
    EXPECT_EQ(t.provenance().mode, TeacherMode::frozen_random);
    for (const auto& l : t.params().layers) {
        for (const double m : l.bn.running_mean) EXPECT_EQ(m, 0.0);
        for (const double v : l.bn.running_var) EXPECT_EQ(v, 1.0);
    }
}

TEST(Teacher, ProxyTrainingReducesLoss) {
    TeacherConfig cfg = quick_teacher(TeacherMode::proxy_trained, 2);
    cfg.steps = 500;
    cfg.scenes = 1;
    const TeacherArtifact t = make_teacher(cfg);
    EXPECT_EQ(t.provenance().steps, 500u);
    EXPECT_LT(t.provenance().proxy_loss_final, t.provenance().proxy_loss_initial);
    EXPECT_NE(t.provenance().to_string().find("proxy_trained"), std::string::npos);
}

TEST(Teacher, ProxyTargetsAreLogCounts) {
    const PointCloud pc = synth_scene(pdtest::small_scene(3));
    const GridConfig g = pdtest::small_grid();
    const VoxelGrid vg = voxelize(pc, g);
    const ProxyBatch b = proxy_batch(pc, g, UnitKind::voxel);
    ASSERT_EQ(b.targets.size(), vg.size());
    for (std::size_t i = 0; i < vg.size(); ++i) EXPECT_DOUBLE_EQ(b.targets[i], std::log1p(static_cast<double>(vg.counts[i])));
    EXPECT_EQ(b.inputs.cols, kVoxelFeatureWidth);
}

TEST(PointFeatures, RawXyzIntensity) {
    const PointCloud pc{{{1, 2, 3, 0.5}, {-1, 0, 4, 0.25}}, "p"};
    EXPECT_EQ(point_input_features(pc), Matrix(2, 4, {1, 2, 3, 0.5, -1, 0, 4, 0.25}));
}

TEST(Checkpoint, RoundTripIsExact) {
    const auto dir = temp_dir("ckpt");
    Rng rng(66);
    EncoderParams p;
    p.layers.push_back(pdtest::random_block(rng, 8, 5));
    p.layers.push_back(pdtest::random_block(rng, 5, 3));
    p.layers[1].bn.running_var[0] = 1.0 / 3.0;
    save_checkpoint(to_checkpoint(p, "encoder", "unit test"), dir / "e.ckpt");
    const Checkpoint ck = load_checkpoint(dir / "e.ckpt");
    EXPECT_EQ(ck.kind, "encoder");
    EXPECT_EQ(ck.provenance, "unit test");
    EXPECT_EQ(encoder_from_checkpoint(ck), p);
}

TEST(Checkpoint, BiasOnlyBlocksRoundTrip) {
    const auto dir = temp_dir("ckpt_adapter");
    Rng rng(67);
    Checkpoint ck;
    ck.kind = "adapter";
    ck.provenance = "x";
    ck.linears.emplace_back(4, 2);
    init_uniform(ck.linears[0], rng);
    ck.has_bn.push_back(false);
    ck.norms.emplace_back(2);
    save_checkpoint(ck, dir / "a.ckpt");
    const Checkpoint back = load_checkpoint(dir / "a.ckpt");
    EXPECT_EQ(back.linears, ck.linears);
    EXPECT_EQ(back.has_bn, ck.has_bn);
    EXPECT_THROW(encoder_from_checkpoint(back), FormatError);
}

TEST(Checkpoint, CorruptFilesRejected) {
    const auto dir = temp_dir("ckpt_bad");
    std::ofstream(dir / "junk.ckpt") << "hello world\n";
    EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), FormatError);
    EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);

    Rng rng(68);
    const EncoderParams p = make_encoder(8, {4}, rng);
    save_checkpoint(to_checkpoint(p, "encoder", "t"), dir / "ok.ckpt");
    std::ifstream in(dir / "ok.ckpt");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream(dir / "cut.ckpt") << text.substr(0, text.size() / 2);
    EXPECT_THROW(load_checkpoint(dir / "cut.ckpt"), FormatError);
}
