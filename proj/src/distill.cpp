#include "pointdistill/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "pointdistill/errors.hpp"
#include "pointdistill/parallel.hpp"
#include "pointdistill/rng.hpp"

namespace pdistill {

void DistillConfig::validate() const {
    if (!(tau > 0.0)) throw DomainError("tau must be positive");
    if (N == 0 || K == 0) throw DomainError("N and K must be at least 1");
    if (batch == 0) throw DomainError("batch must be at least 1");
    if (!(lr >= 0.0) || !(momentum >= 0.0 && momentum < 1.0)) throw DomainError("invalid optimizer settings");
}

LossResult distill_loss(const Matrix& g_student, const Matrix& g_teacher, std::span<const double> phi) {
    if (g_student.rows != g_teacher.rows || g_student.cols != g_teacher.cols) {
        throw ShapeError("distill_loss: student " + shape_str(g_student.rows, g_student.cols) + " vs teacher " +
                         shape_str(g_teacher.rows, g_teacher.cols));
    }
    if (phi.size() != g_student.rows) {
        throw ShapeError("distill_loss: " + std::to_string(phi.size()) + " weights vs " +
                         std::to_string(g_student.rows) + " graphs");
    }
    if (phi.empty()) throw DomainError("distill_loss: empty set");
    double total = 0.0;
    for (const double w : phi) {
        if (!(w >= 0.0)) throw DomainError("distill_loss: weights must be nonnegative");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw DomainError("distill_loss: weights must sum to 1");

    const double n = static_cast<double>(phi.size());
    LossResult r{0.0, Matrix(g_student.rows, g_student.cols)};
    for (std::size_t i = 0; i < g_student.rows; ++i) {
        const auto s = g_student.row(i);
        const auto t = g_teacher.row(i);
        auto g = r.grad.row(i);
        double sq = 0.0;
        for (std::size_t c = 0; c < s.size(); ++c) {
            const double d = s[c] - t[c];
            sq += d * d;
            g[c] = 2.0 * phi[i] / n * d;
        }
        r.loss += phi[i] * sq;
    }
    r.loss /= n;
    return r;
}

namespace {

double row_cosine(std::span<const double> a, std::span<const double> b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) {
        ab += a[c] * b[c];
        aa += a[c] * a[c];
        bb += b[c] * b[c];
    }
    if (aa <= 0.0 || bb <= 0.0) return 0.0;
    return ab / std::sqrt(aa * bb);
}

}  // namespace

double mean_row_cosine(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw ShapeError("mean_row_cosine: " + shape_str(a.rows, a.cols) + " vs " + shape_str(b.rows, b.cols));
    }
    if (a.rows == 0) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i) s += row_cosine(a.row(i), b.row(i));
    return s / static_cast<double>(a.rows);
}

double weighted_row_cosine(const Matrix& a, const Matrix& b, std::span<const double> w) {
    if (a.rows != b.rows || a.cols != b.cols || w.size() != a.rows) {
        throw ShapeError("weighted_row_cosine: " + shape_str(a.rows, a.cols) + " vs " + shape_str(b.rows, b.cols));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i) s += w[i] * row_cosine(a.row(i), b.row(i));
    return s;
}

DistillState init_state(TeacherArtifact teacher, const DistillConfig& cfg,
                        const std::vector<std::size_t>& student_widths) {
    cfg.validate();
    const Rng root(cfg.seed);
    Rng student_rng = root.split(0x57D);
    Rng gamma_rng = root.split(0x6A3);
    const std::size_t in = teacher.params().in_dim();
    const std::size_t c_t = teacher.params().out_dim();
    EncoderParams student = make_encoder(in, student_widths, student_rng);
    const std::size_t c_s = student.out_dim();
    const std::size_t c_out = cfg.c_out ? cfg.c_out : c_t;

    GammaParams gs(c_s, c_out, GammaOwner::student);
    GammaParams gt(c_t, c_out, GammaOwner::teacher);
    init_uniform(gs.block.linear, gamma_rng);
    init_uniform(gt.block.linear, gamma_rng);
    LinearParams adapter(c_s, c_t);
    init_uniform(adapter, gamma_rng);
    return DistillState{std::move(teacher), std::move(student), std::move(gs), std::move(gt), std::move(adapter), {}, 0};
}

TeacherView make_teacher_view(const PointCloud& cloud, const TeacherArtifact& teacher, const DistillConfig& cfg,
                              const GridConfig& grid, std::size_t workers) {
    TeacherView v;
    v.scene_id = cloud.frame_id;
    Matrix coords;
    if (cfg.unit == UnitKind::voxel) {
        const VoxelGrid vg = voxelize(cloud, grid);
        v.candidates = vg.size();
        if (v.candidates == 0) return v;
        v.inputs = voxel_input_features(vg, cloud);
        v.scores = voxel_importance(vg);
        coords = vg.knn_coords();
    } else {
        v.candidates = cloud.size();
        if (v.candidates == 0) return v;
        v.inputs = point_input_features(cloud);
        coords = Matrix(cloud.size(), 3);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            coords(i, 0) = cloud.points[i].x;
            coords(i, 1) = cloud.points[i].y;
            coords(i, 2) = cloud.points[i].z;
        }
    }
    const Matrix teacher_features = encoder_forward(teacher.params(), v.inputs, BnMode::eval);
    if (cfg.unit == UnitKind::point) v.scores = point_importance(teacher_features);
    v.selection = top_n_select(v.scores, coords, teacher_features, cfg.N);
    v.nbrs = knn_grid(v.selection.coords, cfg.K, 0.0, workers);
    return v;
}

Intermediates forward_view(const TeacherView& view, const DistillState& state, const DistillConfig& cfg,
                           BnMode bn_mode) {
    Intermediates im;
    im.scene_id = view.scene_id;
    if (view.empty()) {
        im.skipped = true;
        return im;
    }
    const SelectedSet& sel = view.selection;
    const Matrix& A_T = sel.features;
    im.n_effective = sel.effective();
    im.student_indices = sel.indices;
    im.student_features = encoder_forward(state.student, view.inputs, bn_mode, &im.student_cache);
    im.A_S = gather_rows(im.student_features, im.student_indices);

    const Matrix* student_side = nullptr;
    const Matrix* teacher_side = nullptr;
    if (cfg.mode == DistillMode::local) {
        im.G_T = graph_conv_forward_fused(A_T, view.nbrs, state.gamma_t, bn_mode, im.gt_cache);
        im.G_S = graph_conv_forward_fused(im.A_S, view.nbrs, state.gamma_s, bn_mode, im.gs_cache);
        student_side = &im.G_S;
        teacher_side = &im.G_T;
    } else {
        im.adapted = linear_forward(state.adapter, im.A_S);
        student_side = &im.adapted;
        teacher_side = &A_T;
    }

    if (cfg.reweight == Reweight::uniform) {
        im.phi = uniform_weights(im.n_effective);
    } else if (cfg.unit == UnitKind::voxel) {
        im.phi = reweight_voxel(sel.scores, cfg.tau);
    } else {
        // Point units weight by the teacher-side matched features (G^T, or A^T without graphs).
        im.phi = reweight_point(*teacher_side, cfg.tau);
    }
    LossResult lr = distill_loss(*student_side, *teacher_side, im.phi);
    im.loss = lr.loss;
    im.dmatched = std::move(lr.grad);
    return im;
}

Intermediates forward_pipeline(const PointCloud& cloud, const DistillState& state, const DistillConfig& cfg,
                               const GridConfig& grid, BnMode bn_mode) {
    const TeacherView view = make_teacher_view(cloud, state.teacher, cfg, grid);
    return forward_view(view, state, cfg, bn_mode);
}

Gradients::Gradients(const DistillState& like)
    : student(like.student),
      gamma_s(like.gamma_s.block),
      gamma_t(like.gamma_t.block),
      adapter(like.adapter.in_dim(), like.adapter.out_dim()) {}

void Gradients::accumulate(const Gradients& other) {
    student.accumulate(other.student);
    gamma_s.accumulate(other.gamma_s);
    gamma_t.accumulate(other.gamma_t);
    for (std::size_t k = 0; k < adapter.W.data.size(); ++k) adapter.W.data[k] += other.adapter.W.data[k];
    for (std::size_t k = 0; k < adapter.b.size(); ++k) adapter.b[k] += other.adapter.b[k];
}

void Gradients::scale_by(double f) {
    student.scale_by(f);
    gamma_s.scale_by(f);
    gamma_t.scale_by(f);
    for (auto& v : adapter.W.data) v *= f;
    for (auto& v : adapter.b) v *= f;
}

Gradients backward_pipeline(const Intermediates& im, const TeacherView& view, const DistillState& state,
                            const DistillConfig& cfg) {
    Gradients g(state);
    if (im.skipped) return g;
    Matrix dA_S;
    if (cfg.mode == DistillMode::local) {
        dA_S = graph_conv_backward_fused(state.gamma_s, im.gs_cache, im.dmatched, g.gamma_s);
        if (cfg.train_gamma_teacher) {
            Matrix dG_T = im.dmatched;
            for (auto& v : dG_T.data) v = -v;
            graph_conv_backward_fused(state.gamma_t, im.gt_cache, dG_T, g.gamma_t);
        }
    } else {
        LinearGrads lg = linear_backward(state.adapter, im.A_S, im.dmatched);
        g.adapter.W = std::move(lg.dW);
        g.adapter.b = std::move(lg.db);
        dA_S = std::move(lg.dX);
    }
    Matrix dF(im.student_features.rows, im.student_features.cols);
    for (std::size_t r = 0; r < im.student_indices.size(); ++r) {
        const auto src = dA_S.row(r);
        std::copy(src.begin(), src.end(), dF.row(im.student_indices[r]).begin());
    }
    (void)view;
    encoder_backward(state.student, im.student_cache, dF, g.student);
    return g;
}

std::vector<ParamSlot> trainable_slots(DistillState& state, const Gradients& grads, const DistillConfig& cfg) {
    std::vector<ParamSlot> slots;
    collect_slots(state.student, grads.student, slots);
    if (cfg.mode == DistillMode::local) {
        collect_slots(state.gamma_s.block, grads.gamma_s, slots);
        if (cfg.train_gamma_teacher) collect_slots(state.gamma_t.block, grads.gamma_t, slots);
    } else {
        collect_slots(state.adapter, grads.adapter, slots);
    }
    return slots;
}

StepMetrics train_step(std::span<const TeacherView* const> views, DistillState& state, const DistillConfig& cfg,
                       std::size_t workers) {
    StepMetrics m;
    m.step = state.step;
    std::vector<Intermediates> ims(views.size());
    std::vector<Gradients> grads(views.size());
    parallel_for(views.size(), workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t b = begin; b < end; ++b) {
            ims[b] = forward_view(*views[b], state, cfg, BnMode::train);
            if (!ims[b].skipped && std::isfinite(ims[b].loss)) grads[b] = backward_pipeline(ims[b], *views[b], state, cfg);
        }
    });

    Gradients total(state);
    std::size_t used = 0;
    for (std::size_t b = 0; b < views.size(); ++b) {
        const Intermediates& im = ims[b];
        if (im.skipped) continue;
        if (!std::isfinite(im.loss)) {
            throw TrainingAborted("non-finite loss at step " + std::to_string(state.step) + " on scene '" +
                                      im.scene_id + "'",
                                  state.step, im.scene_id);
        }
        total.accumulate(grads[b]);
        m.loss += im.loss;
        m.phi_entropy += entropy(im.phi);
        m.n_effective += static_cast<double>(im.n_effective);
        ++used;
    }
    if (used == 0) {
        m.skipped = true;
        return m;
    }
    const double inv = 1.0 / static_cast<double>(used);
    total.scale_by(inv);
    m.loss *= inv;
    m.phi_entropy *= inv;
    m.n_effective *= inv;

    // Running statistics in scene order.
    for (const auto& im : ims) {
        if (im.skipped) continue;
        apply_running_stats(state.student, im.student_cache);
        if (cfg.mode == DistillMode::local) {
            batchnorm_update_running(state.gamma_s.block.bn, im.gs_cache.bn);
            batchnorm_update_running(state.gamma_t.block.bn, im.gt_cache.bn);
        }
    }

    const std::vector<ParamSlot> slots = trainable_slots(state, total, cfg);
    double sq = 0.0;
    for (const auto& s : slots)
        for (const double g : s.grad) sq += g * g;
    m.grad_norm = std::sqrt(sq);
    if (state.velocity.empty())
        for (const auto& s : slots) state.velocity.emplace_back(s.value.size(), 0.0);
    for (std::size_t k = 0; k < slots.size(); ++k) {
        auto& vel = state.velocity[k];
        for (std::size_t t = 0; t < slots[k].value.size(); ++t) {
            vel[t] = cfg.momentum * vel[t] + slots[k].grad[t];
            slots[k].value[t] -= cfg.lr * vel[t];
        }
    }
    ++state.step;
    return m;
}

EvalResult evaluate(std::span<const TeacherView> views, const DistillState& state, const DistillConfig& cfg) {
    EvalResult r;
    std::size_t used = 0;
    for (const auto& v : views) {
        const Intermediates im = forward_view(v, state, cfg, BnMode::train);
        if (im.skipped) continue;
        const Matrix& s = cfg.mode == DistillMode::local ? im.G_S : im.adapted;
        const Matrix& t = cfg.mode == DistillMode::local ? im.G_T : v.selection.features;
        r.loss += im.loss;
        r.alignment += mean_row_cosine(s, t);
        r.alignment_weighted += weighted_row_cosine(s, t, im.phi);
        ++used;
    }
    if (used > 0) {
        r.loss /= static_cast<double>(used);
        r.alignment /= static_cast<double>(used);
        r.alignment_weighted /= static_cast<double>(used);
    }
    return r;
}

std::vector<PointCloud> load_scenes(const TrainSetup& setup) {
    std::vector<PointCloud> scenes;
    if (!setup.data_dir.empty()) {
        std::vector<std::filesystem::path> files;
        std::error_code ec;
        for (const auto& entry : std::filesystem::directory_iterator(setup.data_dir, ec))
            if (entry.is_regular_file() && entry.path().extension() == ".bin") files.push_back(entry.path());
        if (ec) throw IoError("cannot list " + setup.data_dir.string() + ": " + ec.message());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw IoError("no .bin frames in " + setup.data_dir.string());
        for (const auto& f : files) scenes.push_back(load_point_cloud(f));
        return scenes;
    }
    for (std::size_t s = 0; s < std::max<std::size_t>(1, setup.train_scenes); ++s) {
        SceneSpec spec = setup.scene;
        spec.seed = scene_seed(setup.distill.seed, s);
        scenes.push_back(synth_scene(spec));
    }
    return scenes;
}

std::string metrics_csv_header() { return "step,loss,grad_norm,phi_entropy,n_effective"; }

std::string metrics_csv_row(const StepMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%.12g,%.12g,%.12g,%.12g", m.step, m.loss, m.grad_norm, m.phi_entropy,
                  m.n_effective);
    return buf;
}

namespace {

nlohmann::json eval_json(const EvalResult& e) {
    return {{"loss", e.loss}, {"alignment", e.alignment}, {"alignment_weighted", e.alignment_weighted}};
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

std::string report_json(const RunReport& r) {
    nlohmann::json j;
    j["config"] = r.config;
    nlohmann::json series = nlohmann::json::array();
    for (const auto& m : r.metrics) {
        series.push_back({{"step", m.step},
                          {"loss", m.loss},
                          {"grad_norm", m.grad_norm},
                          {"phi_entropy", m.phi_entropy},
                          {"n_effective", m.n_effective},
                          {"skipped", m.skipped}});
    }
    j["metrics"] = series;
    j["initial"] = eval_json(r.initial);
    j["final"] = eval_json(r.final);
    j["alignment_gain"] = r.final.alignment - r.initial.alignment;
    j["teacher"] = {{"provenance", r.teacher_provenance},
                    {"hash_before", hex64(r.teacher_hash_before)},
                    {"hash_after", hex64(r.teacher_hash_after)}};
    j["checkpoints"] = r.checkpoints;
    return j.dump(2) + "\n";
}

RunReport train(const TrainSetup& setup) { return train(setup, make_teacher(setup.teacher)); }

RunReport train(const TrainSetup& setup, const TeacherArtifact& teacher) {
    const DistillConfig& cfg = setup.distill;
    cfg.validate();
    RunReport report;
    report.config = setup.config_echo;
    report.teacher_provenance = teacher.provenance().to_string();

    const std::vector<PointCloud> scenes = load_scenes(setup);
    std::vector<TeacherView> views;
    views.reserve(scenes.size());
    for (const auto& s : scenes) views.push_back(make_teacher_view(s, teacher, cfg, setup.grid, setup.workers));

    DistillState state = init_state(teacher, cfg, setup.student_widths);
    report.teacher_hash_before = param_hash(state.teacher.params());
    report.initial = evaluate(views, state, cfg);

    std::ofstream csv;
    const bool write = !setup.out_dir.empty();
    if (write) {
        std::filesystem::create_directories(setup.out_dir);
        const auto path = setup.out_dir / "metrics.csv";
        csv.open(path, std::ios::trunc);
        if (!csv) throw IoError("cannot open " + path.string() + " for writing");
        csv << metrics_csv_header() << '\n';
    }

    std::vector<const TeacherView*> batch(cfg.batch);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        for (std::size_t b = 0; b < cfg.batch; ++b) batch[b] = &views[(step * cfg.batch + b) % views.size()];
        StepMetrics m;
        try {
            m = train_step(batch, state, cfg, setup.workers);
        } catch (const TrainingAborted& e) {
            if (write) {
                std::ofstream dump(setup.out_dir / "abort_dump.txt", std::ios::trunc);
                dump << "step " << e.step() << "\nscene " << e.scene_id() << "\nreason " << e.what() << '\n';
            }
            throw;
        }
        m.step = step;
        report.metrics.push_back(m);
        if (write) {
            csv << metrics_csv_row(m) << '\n';
            if (setup.flush_every && (step + 1) % setup.flush_every == 0) csv.flush();
        }
    }
    report.final = evaluate(views, state, cfg);
    report.teacher_hash_after = param_hash(state.teacher.params());

    if (write) {
        csv.close();
        const auto ck_dir = setup.out_dir / "checkpoints";
        std::filesystem::create_directories(ck_dir);
        const auto save = [&](const Checkpoint& ck, const std::string& name) {
            save_checkpoint(ck, ck_dir / name);
            report.checkpoints.push_back("checkpoints/" + name);
        };
        save(to_checkpoint(state.teacher.params(), "encoder", "teacher " + report.teacher_provenance), "teacher.ckpt");
        save(to_checkpoint(state.student, "encoder", "student step=" + std::to_string(state.step)), "student.ckpt");
        if (cfg.mode == DistillMode::local) {
            save(to_checkpoint(EncoderParams{{state.gamma_s.block}}, "gamma_student", "aggregator"), "gamma_student.ckpt");
            save(to_checkpoint(EncoderParams{{state.gamma_t.block}}, "gamma_teacher", "aggregator"), "gamma_teacher.ckpt");
        } else {
            Checkpoint ck;
            ck.kind = "adapter";
            ck.provenance = "feature adapter";
            ck.linears.push_back(state.adapter);
            ck.has_bn.push_back(false);
            ck.norms.emplace_back(state.adapter.out_dim());
            save(ck, "adapter.ckpt");
        }
        const auto path = setup.out_dir / "report.json";
        std::ofstream js(path, std::ios::trunc);
        if (!js) throw IoError("cannot open " + path.string() + " for writing");
        js << report_json(report);
    }
    return report;
}

std::uint64_t scene_seed(std::uint64_t run_seed, std::size_t index) {
    return Rng(run_seed).split(0x5CE7E000ULL + index).next_u64();
}

}  // namespace pdistill
