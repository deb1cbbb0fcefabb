#include "pointdistill/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "pointdistill/errors.hpp"
#include "pointdistill/parallel.hpp"
#include "pointdistill/rng.hpp"

namespace pdistill {

namespace {

std::string fmt(const char* pattern, double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

}  // namespace

std::vector<std::filesystem::path> cmd_synth(const RunConfig& cfg, const std::filesystem::path& out_dir,
                                             std::ostream& log) {
    cfg.scene.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> written;
    for (std::size_t i = 0; i < cfg.synth_frames; ++i) {
        SceneSpec spec = cfg.scene;
        spec.seed = scene_seed(cfg.seed, i);
        const PointCloud cloud = synth_scene(spec);
        char name[32];
        std::snprintf(name, sizeof name, "frame_%06zu.bin", i);
        const auto path = out_dir / name;
        write_point_cloud(cloud, path);
        log << path.filename().string() << ' ' << cloud.size() << " points\n";
        written.push_back(path);
    }
    return written;
}

RunReport cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log) {
    TrainSetup setup = make_train_setup(cfg, out_dir);
    setup.workers = worker_count();
    const TeacherArtifact teacher = make_teacher(setup.teacher);
    log << "teacher: " << teacher.provenance().to_string() << '\n';
    const RunReport r = train(setup, teacher);
    log << "loss " << fmt("%.6g", r.initial.loss) << " -> " << fmt("%.6g", r.final.loss) << ", alignment "
        << fmt("%.4f", r.initial.alignment) << " -> " << fmt("%.4f", r.final.alignment) << '\n';
    return r;
}

void write_histogram_csv(std::span<const std::size_t> histogram, std::ostream& out) {
    out << "points_per_voxel,voxels\n";
    for (std::size_t c = 1; c < histogram.size(); ++c) out << c << ',' << histogram[c] << '\n';
}

ScoreSummary cmd_inspect_scores(const RunConfig& cfg, const std::filesystem::path& frame, std::ostream& csv) {
    const TrainSetup setup = make_train_setup(cfg, {});
    const DistillConfig& dc = setup.distill;
    const PointCloud cloud = load_point_cloud(frame);
    ScoreSummary summary;

    Matrix coords;
    std::vector<std::size_t> counts;
    std::vector<double> scores;
    std::vector<std::size_t> selected;
    std::vector<double> phi;

    if (dc.unit == UnitKind::voxel) {
        const VoxelGrid grid = voxelize(cloud, setup.grid);
        summary.histogram = count_histogram(grid);
        summary.single_point_fraction = grid.empty() ? 0.0 : single_point_fraction(grid);
        coords = Matrix(grid.size(), 3);
        for (std::size_t i = 0; i < grid.size(); ++i)
            for (std::size_t a = 0; a < 3; ++a) coords(i, a) = grid.centers[i][a];
        counts = grid.counts;
        if (!grid.empty()) {
            scores = voxel_importance(grid).scores;
            selected = top_n_indices(scores, dc.N);
            std::vector<double> sel_scores;
            for (const std::size_t i : selected) sel_scores.push_back(scores[i]);
            phi = dc.reweight == Reweight::uniform ? uniform_weights(selected.size()) : reweight_voxel(sel_scores, dc.tau);
        }
    } else {
        const TeacherArtifact teacher = make_teacher(setup.teacher);
        const DistillState state = init_state(teacher, dc, setup.student_widths);
        const TeacherView view = make_teacher_view(cloud, teacher, dc, setup.grid, worker_count());
        coords = Matrix(cloud.size(), 3);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            coords(i, 0) = cloud.points[i].x;
            coords(i, 1) = cloud.points[i].y;
            coords(i, 2) = cloud.points[i].z;
        }
        counts.assign(cloud.size(), 1);
        scores = view.scores.scores;
        if (!view.empty()) {
            selected = view.selection.indices;
            phi = forward_view(view, state, dc, BnMode::train).phi;
        }
    }

    std::vector<double> phi_of(scores.size(), -1.0);
    for (std::size_t j = 0; j < selected.size(); ++j) phi_of[selected[j]] = phi[j];

    csv << "id,x,y,z,count,score,selected,phi\n";
    char buf[256];
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool sel = phi_of[i] >= 0.0;
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%zu,%.12g,%d,", i, coords(i, 0), coords(i, 1),
                      coords(i, 2), counts[i], scores[i], sel ? 1 : 0);
        csv << buf;
        if (sel) csv << fmt("%.17g", phi_of[i]);
        csv << '\n';
    }
    summary.candidates = scores.size();
    summary.selected = selected.size();
    return summary;
}

void cmd_knn_bench(const RunConfig& cfg, std::ostream& csv) {
    if (cfg.bench_dims != 2 && cfg.bench_dims != 3) {
        throw ConfigError("bench.dims must be 2 or 3, got " + std::to_string(cfg.bench_dims));
    }
    const std::size_t K = cfg.distill.K;
    const std::size_t workers = worker_count();
    csv << "N,K,method,wall_ms,checked\n";
    for (const std::size_t n : cfg.bench_sizes) {
        Rng rng = Rng(cfg.seed).split(n);
        Matrix coords(n, cfg.bench_dims);
        for (double& v : coords.data) v = rng.uniform(0.0, 50.0);

        using clock = std::chrono::steady_clock;
        const auto t0 = clock::now();
        const NeighborLists brute = knn_bruteforce(coords, K, workers);
        const auto t1 = clock::now();
        const NeighborLists grid = knn_grid(coords, K, 0.0, workers);
        const auto t2 = clock::now();
        const int checked = brute == grid ? 1 : 0;
        const auto ms = [](auto d) { return std::chrono::duration<double, std::milli>(d).count(); };
        csv << n << ',' << K << ",bruteforce," << fmt("%.3f", ms(t1 - t0)) << ',' << checked << '\n';
        csv << n << ',' << K << ",grid," << fmt("%.3f", ms(t2 - t1)) << ',' << checked << '\n';
        csv.flush();
    }
}

SweepAxis parse_sweep_axis(const std::string& name) {
    if (name == "K") return SweepAxis::K;
    if (name == "N") return SweepAxis::N;
    if (name == "tau") return SweepAxis::tau;
    throw ConfigError("sweep axis must be K, N or tau, got '" + name + "'");
}

void cmd_sweep(const RunConfig& cfg, SweepAxis axis, std::span<const double> values, bool parallel,
               std::ostream& csv, std::ostream& log) {
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    std::vector<TrainSetup> setups;
    for (const double v : values) {
        RunConfig c = cfg;
        if (axis == SweepAxis::tau) {
            c.distill.tau = v;
        } else {
            if (!(v >= 1.0) || v != std::floor(v)) throw ConfigError("sweep value " + fmt("%g", v) + " is not a positive integer");
            (axis == SweepAxis::K ? c.distill.K : c.distill.N) = static_cast<std::size_t>(v);
        }
        setups.push_back(make_train_setup(c, {}));
    }

    const TeacherArtifact teacher = make_teacher(setups.front().teacher);
    log << "teacher: " << teacher.provenance().to_string() << '\n';

    std::vector<RunReport> reports(setups.size());
    if (parallel) {
        parallel_for(setups.size(), worker_count(), [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) reports[i] = train(setups[i], teacher);
        });
    } else {
        for (std::size_t i = 0; i < setups.size(); ++i) {
            setups[i].workers = worker_count();
            reports[i] = train(setups[i], teacher);
            log << "value " << fmt("%g", values[i]) << " done\n";
        }
    }

    csv << "value,final_loss,alignment\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
        csv << fmt("%.17g", values[i]) << ',' << fmt("%.17g", reports[i].final.loss) << ','
            << fmt("%.17g", reports[i].final.alignment) << '\n';
    }
}

}  // namespace pdistill
