#include "pointdistill/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "pointdistill/errors.hpp"

namespace pdistill {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

double parse_double(const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw ConfigError("expected a real number, got '" + s + "'");
    }
    if (used != s.size()) throw ConfigError("expected a real number, got '" + s + "'");
    return v;
}

std::uint64_t parse_u64(const std::string& s) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ConfigError("expected a nonnegative integer, got '" + s + "'");
    }
    return v;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
    std::vector<std::size_t> v;
    for (const auto& t : split_list(s)) v.push_back(static_cast<std::size_t>(parse_u64(t)));
    if (v.empty()) throw ConfigError("expected a comma-separated list of integers");
    return v;
}

std::string fmt_sizes(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

Vec3 parse_vec3(const std::string& s) {
    const auto parts = split_list(s);
    if (parts.size() != 3) throw ConfigError("expected three comma-separated reals, got '" + s + "'");
    return {parse_double(parts[0]), parse_double(parts[1]), parse_double(parts[2])};
}

std::string fmt_vec3(const Vec3& v) { return fmt_double(v[0]) + "," + fmt_double(v[1]) + "," + fmt_double(v[2]); }

bool parse_bool(const std::string& s) {
    if (s == "1" || s == "true") return true;
    if (s == "0" || s == "false") return false;
    throw ConfigError("expected 0/1/true/false, got '" + s + "'");
}

template <class E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> names) {
    std::string choices;
    for (const auto& [name, value] : names) {
        if (s == name) return value;
        choices += (choices.empty() ? "" : "|") + std::string(name);
    }
    throw ConfigError("expected one of " + choices + ", got '" + s + "'");
}

struct Entry {
    ConfigKey meta;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <class T>
Entry size_entry(std::string key, std::string doc, T RunConfig::*field) {
    return {{std::move(key), std::move(doc)},
            [field](const RunConfig& c) { return std::to_string(c.*field); },
            [field](RunConfig& c, const std::string& v) { c.*field = static_cast<T>(parse_u64(v)); }};
}

Entry double_entry(std::string key, std::string doc, std::function<double&(RunConfig&)> ref) {
    return {{std::move(key), std::move(doc)},
            [ref](const RunConfig& c) { return fmt_double(ref(const_cast<RunConfig&>(c))); },
            [ref](RunConfig& c, const std::string& v) { ref(c) = parse_double(v); }};
}

Entry count_entry(std::string key, std::string doc, std::function<std::size_t&(RunConfig&)> ref) {
    return {{std::move(key), std::move(doc)},
            [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
            [ref](RunConfig& c, const std::string& v) { ref(c) = static_cast<std::size_t>(parse_u64(v)); }};
}

const std::vector<Entry>& entries() {
    static const std::vector<Entry> table = [] {
        std::vector<Entry> t;
        t.push_back({{"seed", "run seed; scenes, teacher and student derive their streams from it"},
                     [](const RunConfig& c) { return std::to_string(c.seed); },
                     [](RunConfig& c, const std::string& v) { c.seed = parse_u64(v); }});

        t.push_back(count_entry("scene.n_ground", "ground-plane points", [](RunConfig& c) -> std::size_t& { return c.scene.n_ground; }));
        t.push_back(count_entry("scene.n_clusters", "Gaussian object blobs", [](RunConfig& c) -> std::size_t& { return c.scene.n_clusters; }));
        t.push_back(count_entry("scene.points_per_cluster_min", "smallest blob", [](RunConfig& c) -> std::size_t& { return c.scene.points_per_cluster_min; }));
        t.push_back(count_entry("scene.points_per_cluster_max", "largest blob", [](RunConfig& c) -> std::size_t& { return c.scene.points_per_cluster_max; }));
        t.push_back(double_entry("scene.cluster_extent", "blob sigma in meters", [](RunConfig& c) -> double& { return c.scene.cluster_extent; }));
        t.push_back(double_entry("scene.ground_extent", "ground covers [-e, e]^2 meters", [](RunConfig& c) -> double& { return c.scene.ground_extent; }));
        t.push_back(double_entry("scene.ground_jitter", "ground z sigma in meters", [](RunConfig& c) -> double& { return c.scene.ground_jitter; }));
        t.push_back(double_entry("scene.noise_height", "outlier z range [0, h] meters", [](RunConfig& c) -> double& { return c.scene.noise_height; }));
        t.push_back(count_entry("scene.n_noise", "uniform outliers", [](RunConfig& c) -> std::size_t& { return c.scene.n_noise; }));

        t.push_back({{"grid.mode", "voxel | pillar"},
                     [](const RunConfig& c) { return std::string(c.grid.mode == GridMode::pillar ? "pillar" : "voxel"); },
                     [](RunConfig& c, const std::string& v) {
                         c.grid.mode = parse_enum<GridMode>(v, {{"voxel", GridMode::voxel}, {"pillar", GridMode::pillar}});
                     }});
        t.push_back({{"grid.origin", "x,y,z lower corner in meters"},
                     [](const RunConfig& c) { return fmt_vec3(c.grid.origin); },
                     [](RunConfig& c, const std::string& v) { c.grid.origin = parse_vec3(v); }});
        t.push_back({{"grid.voxel_size", "dx,dy,dz in meters (dz ignored for pillars)"},
                     [](const RunConfig& c) { return fmt_vec3(c.grid.voxel_size); },
                     [](RunConfig& c, const std::string& v) { c.grid.voxel_size = parse_vec3(v); }});
        t.push_back({{"grid.bounds", "x,y,z upper corner in meters (exclusive)"},
                     [](const RunConfig& c) { return fmt_vec3(c.grid.bounds); },
                     [](RunConfig& c, const std::string& v) { c.grid.bounds = parse_vec3(v); }});

        t.push_back({{"encoder.teacher_widths", "teacher layer widths; the last is C_T"},
                     [](const RunConfig& c) { return fmt_sizes(c.teacher_widths); },
                     [](RunConfig& c, const std::string& v) { c.teacher_widths = parse_sizes(v); }});
        t.push_back({{"encoder.student_widths", "student layer widths; the last is C_S"},
                     [](const RunConfig& c) { return fmt_sizes(c.student_widths); },
                     [](RunConfig& c, const std::string& v) { c.student_widths = parse_sizes(v); }});
        t.push_back({{"teacher.mode", "frozen_random | proxy_trained"},
                     [](const RunConfig& c) {
                         return std::string(c.teacher_mode == TeacherMode::frozen_random ? "frozen_random" : "proxy_trained");
                     },
                     [](RunConfig& c, const std::string& v) {
                         c.teacher_mode = parse_enum<TeacherMode>(
                             v, {{"frozen_random", TeacherMode::frozen_random}, {"proxy_trained", TeacherMode::proxy_trained}});
                     }});
        t.push_back(size_entry("teacher.steps", "proxy-task optimizer steps", &RunConfig::teacher_steps));
        t.push_back(double_entry("teacher.lr", "proxy-task learning rate", [](RunConfig& c) -> double& { return c.teacher_lr; }));
        t.push_back(double_entry("teacher.momentum", "proxy-task momentum", [](RunConfig& c) -> double& { return c.teacher_momentum; }));
        t.push_back(size_entry("teacher.scenes", "proxy-task scene pool", &RunConfig::teacher_scenes));

        t.push_back({{"distill.mode", "local (graph features) | feature (adapter on raw features)"},
                     [](const RunConfig& c) { return std::string(c.distill.mode == DistillMode::local ? "local" : "feature"); },
                     [](RunConfig& c, const std::string& v) {
                         c.distill.mode = parse_enum<DistillMode>(v, {{"local", DistillMode::local}, {"feature", DistillMode::feature}});
                     }});
        t.push_back({{"distill.reweight", "importance | uniform"},
                     [](const RunConfig& c) {
                         return std::string(c.distill.reweight == Reweight::importance ? "importance" : "uniform");
                     },
                     [](RunConfig& c, const std::string& v) {
                         c.distill.reweight =
                             parse_enum<Reweight>(v, {{"importance", Reweight::importance}, {"uniform", Reweight::uniform}});
                     }});
        t.push_back({{"distill.unit", "voxel | point"},
                     [](const RunConfig& c) { return std::string(c.distill.unit == UnitKind::voxel ? "voxel" : "point"); },
                     [](RunConfig& c, const std::string& v) {
                         c.distill.unit = parse_enum<UnitKind>(v, {{"voxel", UnitKind::voxel}, {"point", UnitKind::point}});
                     }});
        t.push_back(count_entry("distill.N", "to-be-distilled units per scene", [](RunConfig& c) -> std::size_t& { return c.distill.N; }));
        t.push_back(count_entry("distill.K", "nodes per local graph (self included)", [](RunConfig& c) -> std::size_t& { return c.distill.K; }));
        t.push_back(double_entry("distill.tau", "softmax temperature of the loss weights", [](RunConfig& c) -> double& { return c.distill.tau; }));
        t.push_back(count_entry("distill.c_out", "aggregator output width; 0 = teacher width", [](RunConfig& c) -> std::size_t& { return c.distill.c_out; }));
        t.push_back(double_entry("distill.lr", "SGD learning rate", [](RunConfig& c) -> double& { return c.distill.lr; }));
        t.push_back(double_entry("distill.momentum", "SGD momentum", [](RunConfig& c) -> double& { return c.distill.momentum; }));
        t.push_back(count_entry("distill.steps", "optimizer steps", [](RunConfig& c) -> std::size_t& { return c.distill.steps; }));
        t.push_back(count_entry("distill.batch", "scenes per step", [](RunConfig& c) -> std::size_t& { return c.distill.batch; }));
        t.push_back({{"distill.train_gamma_teacher", "also update the teacher-side aggregator (0|1)"},
                     [](const RunConfig& c) { return std::string(c.distill.train_gamma_teacher ? "1" : "0"); },
                     [](RunConfig& c, const std::string& v) { c.distill.train_gamma_teacher = parse_bool(v); }});

        t.push_back(size_entry("train.scenes", "synthetic scene pool size", &RunConfig::train_scenes));
        t.push_back({{"train.data_dir", "directory of .bin frames; empty = synthetic scenes"},
                     [](const RunConfig& c) { return c.data_dir; },
                     [](RunConfig& c, const std::string& v) { c.data_dir = v; }});
        t.push_back(size_entry("train.flush_every", "metric CSV flush interval in steps", &RunConfig::flush_every));
        t.push_back(size_entry("synth.frames", "frames written by synth", &RunConfig::synth_frames));
        t.push_back({{"bench.sizes", "point counts timed by knn-bench"},
                     [](const RunConfig& c) { return fmt_sizes(c.bench_sizes); },
                     [](RunConfig& c, const std::string& v) { c.bench_sizes = parse_sizes(v); }});
        t.push_back(size_entry("bench.dims", "coordinate dimension for knn-bench (2 or 3)", &RunConfig::bench_dims));
        return t;
    }();
    return table;
}

const Entry& find_entry(const std::string& key) {
    for (const auto& e : entries())
        if (e.meta.key == key) return e;
    throw ConfigError("unknown key '" + key + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        for (const auto& e : entries()) k.push_back(e.meta);
        return k;
    }();
    return keys;
}

std::string get_value(const RunConfig& cfg, const std::string& key) { return find_entry(key).get(cfg); }

void set_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    const Entry& e = find_entry(key);
    try {
        e.set(cfg, value);
    } catch (const ConfigError& err) {
        throw ConfigError("key '" + key + "': " + err.what());
    }
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = source + ":" + std::to_string(lineno);
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        try {
            set_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& err) {
            throw ConfigError(where + ": " + err.what());
        }
    }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(cfg, ss.str(), path.string());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    set_value(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string format_config(const RunConfig& cfg) {
    std::string out = "# pointdistill configuration\n";
    for (const auto& e : entries()) out += "# " + e.meta.doc + "\n" + e.meta.key + " = " + e.get(cfg) + "\n";
    return out;
}

std::map<std::string, std::string> config_map(const RunConfig& cfg) {
    std::map<std::string, std::string> m;
    for (const auto& e : entries()) m[e.meta.key] = e.get(cfg);
    return m;
}

TrainSetup make_train_setup(const RunConfig& cfg, const std::filesystem::path& out_dir) {
    TrainSetup s;
    s.distill = cfg.distill;
    s.distill.seed = cfg.seed;
    s.distill.validate();
    s.grid = cfg.grid;
    if (s.grid.mode == GridMode::pillar) s.grid.voxel_size[2] = s.grid.bounds[2] - s.grid.origin[2];
    s.grid.validate();
    s.scene = cfg.scene;
    s.scene.validate();

    s.teacher.mode = cfg.teacher_mode;
    s.teacher.seed = cfg.seed;
    s.teacher.unit = cfg.distill.unit;
    s.teacher.widths = cfg.teacher_widths;
    s.teacher.steps = cfg.teacher_steps;
    s.teacher.lr = cfg.teacher_lr;
    s.teacher.momentum = cfg.teacher_momentum;
    s.teacher.scenes = cfg.teacher_scenes;
    s.teacher.scene = s.scene;
    s.teacher.grid = s.grid;

    s.student_widths = cfg.student_widths;
    s.train_scenes = cfg.train_scenes;
    s.data_dir = cfg.data_dir;
    s.out_dir = out_dir;
    s.flush_every = cfg.flush_every;
    s.config_echo = config_map(cfg);
    return s;
}

}  // namespace pdistill
