#include "pointdistill/encoders.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pointdistill/errors.hpp"

namespace pdistill {

EncoderParams make_encoder(std::size_t in_dim, const std::vector<std::size_t>& widths, Rng& rng) {
    if (widths.empty()) throw DomainError("make_encoder: need at least one layer");
    EncoderParams p;
    std::size_t in = in_dim;
    for (const std::size_t w : widths) {
        if (w == 0 || in == 0) throw DomainError("make_encoder: layer widths must be positive");
        DenseBlock block(in, w);
        init_uniform(block.linear, rng);
        p.layers.push_back(std::move(block));
        in = w;
    }
    return p;
}

EncoderGrads::EncoderGrads(const EncoderParams& like) {
    for (const auto& l : like.layers) layers.emplace_back(l);
}

void EncoderGrads::accumulate(const EncoderGrads& other) {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].accumulate(other.layers[i]);
}

void EncoderGrads::scale_by(double f) {
    for (auto& l : layers) l.scale_by(f);
}

Matrix encoder_forward(const EncoderParams& p, const Matrix& X, BnMode bn_mode, EncoderCache* cache) {
    if (p.layers.empty()) throw DomainError("encoder_forward: encoder has no layers");
    if (X.cols != p.in_dim()) {
        throw ShapeError("encoder_forward: input " + shape_str(X.rows, X.cols) + " vs encoder input width " +
                         std::to_string(p.in_dim()));
    }
    EncoderCache local;
    EncoderCache& c = cache ? *cache : local;
    c.layers.resize(p.layers.size());
    Matrix h = X;
    for (std::size_t l = 0; l < p.layers.size(); ++l) h = dense_forward(p.layers[l], h, bn_mode, c.layers[l]);
    return h;
}

Matrix encoder_backward(const EncoderParams& p, const EncoderCache& cache, const Matrix& dY, EncoderGrads& grads) {
    Matrix d = dY;
    for (std::size_t l = p.layers.size(); l-- > 0;) d = dense_backward(p.layers[l], cache.layers[l], d, grads.layers[l]);
    return d;
}

void apply_running_stats(EncoderParams& p, const EncoderCache& cache) {
    for (std::size_t l = 0; l < p.layers.size(); ++l) batchnorm_update_running(p.layers[l].bn, cache.layers[l].bn);
}

void collect_slots(EncoderParams& p, const EncoderGrads& g, std::vector<ParamSlot>& out) {
    for (std::size_t l = 0; l < p.layers.size(); ++l) collect_slots(p.layers[l], g.layers[l], out);
}

namespace {

void fnv(std::uint64_t& h, std::span<const double> values) {
    for (const double v : values) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof v);
        for (const unsigned char b : bytes) {
            h ^= b;
            h *= 0x100000001B3ULL;
        }
    }
}

}  // namespace

std::uint64_t param_hash(const EncoderParams& p) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& l : p.layers) {
        fnv(h, l.linear.W.data);
        fnv(h, l.linear.b);
        fnv(h, l.bn.scale);
        fnv(h, l.bn.shift);
        fnv(h, l.bn.running_mean);
        fnv(h, l.bn.running_var);
    }
    return h;
}

Matrix point_input_features(const PointCloud& cloud) {
    Matrix F(cloud.size(), kPointFeatureWidth);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Point& p = cloud.points[i];
        F(i, 0) = p.x;
        F(i, 1) = p.y;
        F(i, 2) = p.z;
        F(i, 3) = p.intensity;
    }
    return F;
}

std::string TeacherProvenance::to_string() const {
    std::ostringstream os;
    if (mode == TeacherMode::frozen_random) {
        os << "frozen_random seed=" << seed;
    } else {
        char buf[128];
        std::snprintf(buf, sizeof buf, " loss_initial=%.17g loss_final=%.17g", proxy_loss_initial, proxy_loss_final);
        os << "proxy_trained task=log_count steps=" << steps << " seed=" << seed << buf;
    }
    return os.str();
}

ProxyBatch proxy_batch(const PointCloud& cloud, const GridConfig& grid, UnitKind unit) {
    const VoxelGrid vg = voxelize(cloud, grid);
    ProxyBatch b;
    if (unit == UnitKind::voxel) {
        b.inputs = voxel_input_features(vg, cloud);
        for (const auto c : vg.counts) b.targets.push_back(std::log1p(static_cast<double>(c)));
        return b;
    }
    // Point units: each in-grid point regresses the log count of its voxel.
    std::vector<std::size_t> in_grid;
    std::vector<double> target(cloud.size(), -1.0);
    for (const auto& v : vg.occupied)
        for (const auto id : v.point_ids) target[id] = std::log1p(static_cast<double>(v.point_ids.size()));
    for (std::size_t i = 0; i < cloud.size(); ++i)
        if (target[i] >= 0.0) in_grid.push_back(i);
    b.inputs = Matrix(in_grid.size(), kPointFeatureWidth);
    for (std::size_t r = 0; r < in_grid.size(); ++r) {
        const Point& p = cloud.points[in_grid[r]];
        b.inputs(r, 0) = p.x;
        b.inputs(r, 1) = p.y;
        b.inputs(r, 2) = p.z;
        b.inputs(r, 3) = p.intensity;
        b.targets.push_back(target[in_grid[r]]);
    }
    return b;
}

namespace {

struct ProxyEval {
    double loss = 0.0;
    EncoderCache cache;
    Matrix features;
    Matrix dpred;  // n x 1
};

ProxyEval proxy_forward(const EncoderParams& enc, const LinearParams& head, const ProxyBatch& batch) {
    ProxyEval ev;
    ev.features = encoder_forward(enc, batch.inputs, BnMode::train, &ev.cache);
    const Matrix pred = linear_forward(head, ev.features);
    const double n = static_cast<double>(batch.targets.size());
    ev.dpred = Matrix(pred.rows, 1);
    for (std::size_t i = 0; i < pred.rows; ++i) {
        const double r = pred(i, 0) - batch.targets[i];
        ev.loss += r * r / n;
        ev.dpred(i, 0) = 2.0 * r / n;
    }
    return ev;
}

}  // namespace

TeacherArtifact make_teacher(const TeacherConfig& cfg) {
    Rng rng = Rng(cfg.seed).split(0x7EAC);
    const std::size_t in = cfg.unit == UnitKind::voxel ? kVoxelFeatureWidth : kPointFeatureWidth;
    EncoderParams enc = make_encoder(in, cfg.widths, rng);
    TeacherProvenance prov;
    prov.mode = cfg.mode;
    prov.seed = cfg.seed;

    if (cfg.mode == TeacherMode::proxy_trained) {
        LinearParams head(enc.out_dim(), 1);
        init_uniform(head, rng);
        std::vector<ProxyBatch> batches;
        for (std::size_t s = 0; s < std::max<std::size_t>(1, cfg.scenes); ++s) {
            SceneSpec spec = cfg.scene;
            spec.seed = Rng(cfg.seed).split(0x7EAC5CE0ULL + s).next_u64();
            batches.push_back(proxy_batch(synth_scene(spec), cfg.grid, cfg.unit));
        }
        // Momentum buffers follow collect_slots order: encoder blocks, then the head.
        std::vector<std::vector<double>> velocity;
        const auto usable = [](const ProxyBatch& b) { return b.inputs.rows >= 2; };

        prov.steps = cfg.steps;
        if (usable(batches.front())) prov.proxy_loss_initial = proxy_forward(enc, head, batches.front()).loss;
        for (std::size_t step = 0; step < cfg.steps; ++step) {
            const ProxyBatch& batch = batches[step % batches.size()];
            if (!usable(batch)) continue;
            ProxyEval ev = proxy_forward(enc, head, batch);
            LinearGrads hg = linear_backward(head, ev.features, ev.dpred);
            EncoderGrads eg(enc);
            encoder_backward(enc, ev.cache, hg.dX, eg);
            apply_running_stats(enc, ev.cache);

            LinearParams head_grad(head.in_dim(), 1);
            head_grad.W = hg.dW;
            head_grad.b = hg.db;
            std::vector<ParamSlot> slots;
            collect_slots(enc, eg, slots);
            collect_slots(head, head_grad, slots);
            if (velocity.empty())
                for (const auto& s : slots) velocity.emplace_back(s.value.size(), 0.0);
            for (std::size_t k = 0; k < slots.size(); ++k)
                for (std::size_t t = 0; t < slots[k].value.size(); ++t) {
                    velocity[k][t] = cfg.momentum * velocity[k][t] + slots[k].grad[t];
                    slots[k].value[t] -= cfg.lr * velocity[k][t];
                }
        }
        if (usable(batches.front())) prov.proxy_loss_final = proxy_forward(enc, head, batches.front()).loss;
    }
    for (auto& l : enc.layers) l.bn.mode = BnMode::eval;
    return TeacherArtifact(std::move(enc), prov);
}

// ---------------------------------------------------------------------------
// Checkpoint container

namespace {

constexpr const char* kMagic = "pointdistill-checkpoint";
constexpr int kVersion = 1;

void write_values(std::ostream& os, const char* tag, std::span<const double> v) {
    os << tag << ' ' << v.size();
    char buf[40];
    for (const double x : v) {
        std::snprintf(buf, sizeof buf, " %.17g", x);
        os << buf;
    }
    os << '\n';
}

std::vector<double> read_values(std::istream& is, const std::string& tag, const std::filesystem::path& path) {
    std::string got;
    std::size_t n = 0;
    if (!(is >> got >> n) || got != tag) {
        throw FormatError(path.string() + ": expected '" + tag + "' record, found '" + got + "'");
    }
    std::vector<double> v(n);
    for (auto& x : v) {
        std::string tok;
        if (!(is >> tok)) throw FormatError(path.string() + ": truncated '" + tag + "' record");
        x = std::strtod(tok.c_str(), nullptr);
    }
    return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << kMagic << ' ' << kVersion << '\n';
    os << "kind " << ck.kind << '\n';
    os << "provenance " << ck.provenance << '\n';
    os << "blocks " << ck.linears.size() << '\n';
    for (std::size_t i = 0; i < ck.linears.size(); ++i) {
        const LinearParams& lin = ck.linears[i];
        const bool bn = i < ck.has_bn.size() && ck.has_bn[i];
        os << "block " << i << ' ' << lin.in_dim() << ' ' << lin.out_dim() << ' ' << (bn ? 1 : 0) << '\n';
        write_values(os, "W", lin.W.data);
        write_values(os, "b", lin.b);
        if (bn) {
            const BatchNormState& s = ck.norms[i];
            write_values(os, "bn_scale", s.scale);
            write_values(os, "bn_shift", s.shift);
            write_values(os, "bn_running_mean", s.running_mean);
            write_values(os, "bn_running_var", s.running_var);
            char buf[96];
            std::snprintf(buf, sizeof buf, "bn_config %.17g %.17g %s\n", s.momentum, s.eps,
                          s.mode == BnMode::train ? "train" : "eval");
            os << buf;
        }
    }
    os << "end\n";
    if (!os) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    std::string magic;
    int version = 0;
    if (!(is >> magic >> version) || magic != kMagic) throw FormatError(path.string() + ": not a checkpoint");
    if (version != kVersion) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
    Checkpoint ck;
    std::string tag;
    is >> tag >> ck.kind;
    if (tag != "kind") throw FormatError(path.string() + ": missing kind");
    is >> tag;
    if (tag != "provenance") throw FormatError(path.string() + ": missing provenance");
    std::getline(is >> std::ws, ck.provenance);
    std::size_t blocks = 0;
    is >> tag >> blocks;
    if (tag != "blocks") throw FormatError(path.string() + ": missing block count");
    for (std::size_t i = 0; i < blocks; ++i) {
        std::size_t idx = 0, in = 0, out = 0;
        int bn = 0;
        if (!(is >> tag >> idx >> in >> out >> bn) || tag != "block" || idx != i) {
            throw FormatError(path.string() + ": malformed block header " + std::to_string(i));
        }
        LinearParams lin(in, out);
        auto w = read_values(is, "W", path);
        auto b = read_values(is, "b", path);
        if (w.size() != in * out || b.size() != out) throw FormatError(path.string() + ": block shape mismatch");
        lin.W.data = std::move(w);
        lin.b = std::move(b);
        BatchNormState s(out);
        if (bn) {
            s.scale = read_values(is, "bn_scale", path);
            s.shift = read_values(is, "bn_shift", path);
            s.running_mean = read_values(is, "bn_running_mean", path);
            s.running_var = read_values(is, "bn_running_var", path);
            std::string mode, m, e;
            if (!(is >> tag >> m >> e >> mode) || tag != "bn_config") {
                throw FormatError(path.string() + ": missing bn_config");
            }
            s.momentum = std::strtod(m.c_str(), nullptr);
            s.eps = std::strtod(e.c_str(), nullptr);
            s.mode = mode == "train" ? BnMode::train : BnMode::eval;
            if (s.scale.size() != out || s.shift.size() != out || s.running_mean.size() != out ||
                s.running_var.size() != out) {
                throw FormatError(path.string() + ": batch-norm shape mismatch");
            }
        }
        ck.linears.push_back(std::move(lin));
        ck.has_bn.push_back(bn != 0);
        ck.norms.push_back(std::move(s));
    }
    is >> tag;
    if (tag != "end") throw FormatError(path.string() + ": missing end marker");
    return ck;
}

Checkpoint to_checkpoint(const EncoderParams& p, std::string kind, std::string provenance) {
    Checkpoint ck;
    ck.kind = std::move(kind);
    ck.provenance = std::move(provenance);
    for (const auto& l : p.layers) {
        ck.linears.push_back(l.linear);
        ck.has_bn.push_back(true);
        ck.norms.push_back(l.bn);
    }
    return ck;
}

EncoderParams encoder_from_checkpoint(const Checkpoint& ck) {
    EncoderParams p;
    for (std::size_t i = 0; i < ck.linears.size(); ++i) {
        if (!ck.has_bn[i]) throw FormatError("checkpoint block " + std::to_string(i) + " has no batch norm");
        DenseBlock block;
        block.linear = ck.linears[i];
        block.bn = ck.norms[i];
        p.layers.push_back(std::move(block));
    }
    return p;
}

}  // namespace pdistill
