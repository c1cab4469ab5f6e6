#include "lipsub/scenario.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace lipsub {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

VectorXd vector_from_json(const json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const VectorXd>(values.data(), static_cast<long>(values.size()));
}

Mesh mesh_from_json(const json& j, const std::string& base_dir, const std::vector<int>& pins) {
    if (j.contains("generator")) {
        const json& g = j.at("generator");
        const std::string type = g.at("type").get<std::string>();
        if (type == "bar2d")
            return make_bar_2d(g.at("nx").get<int>(), g.at("ny").get<int>(),
                               g.value("width", 1.0), g.value("height", 0.25),
                               g.value("pin_left", true));
        if (type == "bar3d")
            return make_bar_3d(g.at("nx").get<int>(), g.at("ny").get<int>(), g.at("nz").get<int>(),
                               g.value("width", 1.0), g.value("height", 0.25),
                               g.value("depth", 0.25), g.value("pin_left", true));
        if (type == "cloth")
            return make_cloth_grid(g.at("nx").get<int>(), g.at("nz").get<int>(),
                                   g.value("width", 1.0), g.value("depth", 1.0), pins);
        throw std::invalid_argument("scenario: unknown mesh generator '" + type + "'");
    }
    const std::string rel = j.at("path").get<std::string>();
    const std::filesystem::path path = std::filesystem::path(base_dir) / rel;
    const std::string fmt = j.value("format", "node_ele");
    if (fmt == "node_ele") return load_mesh(path.string(), MeshFormat::TetNodeEle, pins);
    if (fmt == "obj") return load_mesh(path.string(), MeshFormat::ObjTriangle, pins);
    throw std::invalid_argument("scenario: unknown mesh format '" + fmt + "'");
}

}  // namespace

Scenario scenario_from_json(const json& j, const std::string& base_dir) {
    Scenario s;
    s.name = j.value("name", "scenario");

    std::vector<int> pins;
    if (j.contains("pins")) {
        const json& p = j.at("pins");
        if (p.contains("vertices")) pins = p.at("vertices").get<std::vector<int>>();
    }
    s.mesh = mesh_from_json(j.at("mesh"), base_dir, pins);
    // Generators may carry their own pin convention; an explicit vertex list
    // overrides it.
    if (!pins.empty()) s.mesh = with_pins(s.mesh, pins);

    if (j.contains("material")) {
        const json& m = j.at("material");
        s.material.mu = m.value("mu", s.material.mu);
        s.material.lambda = m.value("lambda", s.material.lambda);
        s.material.density = m.value("density", s.material.density);
        s.material.bend_stiffness = m.value("bend_stiffness", s.material.bend_stiffness);
        s.material.contact_stiffness = m.value("contact_stiffness", s.material.contact_stiffness);
        s.material.contact_margin = m.value("contact_margin", s.material.contact_margin);
    }
    s.material.validate();

    s.gravity = j.contains("gravity") ? vector_from_json(j.at("gravity"))
                                      : VectorXd::Zero(s.mesh.dim);
    if (s.gravity.size() != s.mesh.dim)
        throw std::invalid_argument("scenario: gravity dimension mismatch");

    s.dt = j.value("dt", 0.05);
    s.quasi_static = j.value("quasi_static", false);
    s.episodes = j.value("episodes", 10);
    s.steps_per_episode = j.value("steps_per_episode", 100);
    s.test_fraction = j.value("test_fraction", 0.2);

    if (j.contains("colliders"))
        for (const json& c : j.at("colliders")) {
            const std::string type = c.at("type").get<std::string>();
            if (type == "halfspace")
                s.colliders.push_back(
                    SdfShape::half_space(vector_from_json(c.at("normal")), c.value("offset", 0.0)));
            else if (type == "sphere")
                s.colliders.push_back(
                    SdfShape::sphere(vector_from_json(c.at("center")), c.at("radius").get<double>()));
            else
                throw std::invalid_argument("scenario: unknown collider '" + type + "'");
        }

    if (j.contains("interactions")) {
        const json& it = j.at("interactions");
        s.interact.force_min = it.value("force_min", 0.0);
        s.interact.force_max = it.value("force_max", 0.0);
        s.interact.patch_radius = it.value("patch_radius", 0.0);
        s.interact.steps_min = it.value("steps_min", 1);
        s.interact.steps_max = it.value("steps_max", 1);
    }

    if (j.contains("pin_motion")) {
        const json& pm = j.at("pin_motion");
        const std::string type = pm.value("type", "none");
        if (type == "oscillate") {
            s.pin_motion.kind = PinMotion::Kind::Oscillate;
            s.pin_motion.axis = vector_from_json(pm.at("axis"));
            s.pin_motion.amplitude = pm.value("amplitude", 0.0);
            s.pin_motion.period = pm.value("period", 1.0);
            if (s.pin_motion.axis.size() != s.mesh.dim)
                throw std::invalid_argument("scenario: pin_motion axis dimension mismatch");
        } else if (type != "none") {
            throw std::invalid_argument("scenario: unknown pin_motion '" + type + "'");
        }
    }
    return s;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("scenario: cannot open '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("scenario: invalid JSON in '" + path + "': " + e.what());
    }
    return scenario_from_json(j, std::filesystem::path(path).parent_path().string());
}

Eigen::MatrixXd pin_positions_at(const Scenario& scenario, double t) {
    MatrixXd pins = scenario.mesh.vertices;
    if (scenario.pin_motion.kind == PinMotion::Kind::Oscillate) {
        const VectorXd offset = scenario.pin_motion.amplitude *
                                std::sin(2.0 * M_PI * t / scenario.pin_motion.period) *
                                scenario.pin_motion.axis;
        for (int v : scenario.mesh.pinned) pins.row(v) += offset.transpose();
    }
    return pins;
}

Interaction sample_interaction(const Scenario& scenario, int episode_steps, Rng& rng) {
    const Mesh& mesh = scenario.mesh;
    Interaction it;
    const int center = static_cast<int>(randint(rng, static_cast<std::uint64_t>(mesh.num_vertices())));
    for (int v = 0; v < mesh.num_vertices(); ++v)
        if ((mesh.vertices.row(v) - mesh.vertices.row(center)).norm() <=
            scenario.interact.patch_radius)
            it.patch.push_back(v);
    if (it.patch.empty()) it.patch.push_back(center);

    VectorXd dir(mesh.dim);
    double norm = 0.0;
    do {
        for (int c = 0; c < mesh.dim; ++c) dir[c] = randn(rng);
        norm = dir.norm();
    } while (norm < 1e-12);
    const double mag = randu(rng, scenario.interact.force_min, scenario.interact.force_max);
    it.force_per_vertex = (mag / norm / static_cast<double>(it.patch.size())) * dir;

    const int dur_span = std::max(scenario.interact.steps_max - scenario.interact.steps_min, 0);
    it.duration = scenario.interact.steps_min +
                  static_cast<int>(dur_span > 0 ? randint(rng, static_cast<std::uint64_t>(dur_span + 1)) : 0);
    it.duration = std::min(it.duration, episode_steps);
    const int latest = std::max(episode_steps - it.duration, 0);
    it.start = latest > 0 ? static_cast<int>(randint(rng, static_cast<std::uint64_t>(latest + 1))) : 0;
    return it;
}

std::vector<Interaction> replay_interactions(const Scenario& scenario, int steps, Rng& rng) {
    std::vector<Interaction> sequence;
    int cursor = 0;
    while (cursor < steps) {
        Interaction it = sample_interaction(scenario, scenario.steps_per_episode, rng);
        it.start = cursor;
        it.duration = std::max(it.duration, 1);
        cursor += it.duration;
        sequence.push_back(std::move(it));
    }
    return sequence;
}

FrameInput frame_at(const Scenario& scenario, const MassMatrix& mass,
                    const std::vector<Interaction>& interactions, int step, double t) {
    const Mesh& mesh = scenario.mesh;
    FrameInput frame;
    frame.pin_positions = pin_positions_at(scenario, t);
    frame.external_force = VectorXd::Zero(mesh.num_dofs());
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        const int f = mesh.free_index[v];
        if (f < 0) continue;
        for (int c = 0; c < mesh.dim; ++c)
            frame.external_force[f * mesh.dim + c] =
                mass.diag[f * mesh.dim + c] * scenario.gravity[c];
    }
    for (const Interaction& it : interactions) {
        if (step < it.start || step >= it.start + it.duration) continue;
        for (int v : it.patch) {
            const int f = mesh.free_index[v];
            if (f < 0) continue;
            for (int c = 0; c < mesh.dim; ++c)
                frame.external_force[f * mesh.dim + c] += it.force_per_vertex[c];
        }
    }
    return frame;
}

void save_dataset(const Dataset& dataset, const std::string& dir, const nlohmann::json& extra) {
    std::filesystem::create_directories(dir);
    json manifest = extra;
    manifest["frames"] = dataset.snapshots.rows();
    manifest["n"] = dataset.snapshots.cols();
    manifest["provenance"] = dataset.provenance;
    std::ofstream mf(std::filesystem::path(dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";

    std::ofstream bin(std::filesystem::path(dir) / "snapshots.bin", std::ios::binary);
    for (long i = 0; i < dataset.snapshots.rows(); ++i)
        for (long j = 0; j < dataset.snapshots.cols(); ++j) {
            const double v = dataset.snapshots(i, j);
            bin.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream mf(std::filesystem::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("dataset: cannot open manifest in '" + dir + "'");
    const json manifest = json::parse(mf);
    const long frames = manifest.at("frames").get<long>();
    const long n = manifest.at("n").get<long>();

    Dataset d;
    d.provenance = manifest.value("provenance", "");
    d.snapshots.resize(frames, n);
    std::ifstream bin(std::filesystem::path(dir) / "snapshots.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("dataset: cannot open snapshots in '" + dir + "'");
    for (long i = 0; i < frames; ++i)
        for (long j = 0; j < n; ++j) {
            double v = 0.0;
            bin.read(reinterpret_cast<char*>(&v), sizeof(v));
            if (!bin) throw std::runtime_error("dataset: truncated snapshots.bin");
            d.snapshots(i, j) = v;
        }
    return d;
}

SimState rest_state(const Mesh& mesh, int subspace_dim) {
    SimState s;
    s.positions = mesh.vertices;
    s.velocities = MatrixXd::Zero(mesh.num_vertices(), mesh.dim);
    s.z = VectorXd::Zero(subspace_dim);
    s.t = 0.0;
    return s;
}

}  // namespace lipsub
