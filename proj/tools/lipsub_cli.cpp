// lipsub — reduced-order deformable simulation with Lipschitz-regularized
// neural subspaces. Subcommands: gen-data, train, cubature, simulate, bench,
// lipschitz, project. Each reads a JSON config and writes its outputs plus a
// manifest under --out.

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Core>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "lipsub/cubature.hpp"
#include "lipsub/diagnostics.hpp"
#include "lipsub/full_solver.hpp"
#include "lipsub/manifest.hpp"
#include "lipsub/scenario.hpp"
#include "lipsub/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lipsub;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed_override;
    int threads = 1;

    json config;
    std::string config_dir;

    std::uint64_t seed(std::uint64_t fallback) const {
        if (seed_override) return *seed_override;
        if (config.contains("seed")) return config.at("seed").get<std::uint64_t>();
        return fallback;
    }
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "JSON config file")->required();
    cmd->add_option("--out", c.out_dir, "output run directory")->required();
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&c](std::uint64_t s) { c.seed_override = s; }, "override the config seed");
    cmd->add_option("--threads", c.threads, "worker threads (math is deterministic either way)");
}

void load_config(Common& c) {
    if (!fs::exists(c.config_path))
        throw ConfigError("config file not found: " + c.config_path);
    std::ifstream in(c.config_path);
    try {
        c.config = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + c.config_path + " is not valid JSON: " + e.what());
    }
    c.config_dir = fs::path(c.config_path).parent_path().string();
    fs::create_directories(c.out_dir);
    Eigen::setNbThreads(std::max(c.threads, 1));
}

std::string resolve(const Common& c, const std::string& rel) {
    fs::path p(rel);
    if (p.is_absolute()) return rel;
    return (fs::path(c.config_dir) / p).string();
}

Scenario load_scenario_ref(const Common& c) {
    if (!c.config.contains("scenario")) throw ConfigError("config needs a 'scenario' entry");
    const json& s = c.config.at("scenario");
    if (s.is_string()) return load_scenario(resolve(c, s.get<std::string>()));
    return scenario_from_json(s, c.config_dir);
}

SolverConfig solver_from_json(const json& j, double dt) {
    SolverConfig cfg;
    cfg.dt = dt;
    if (j.is_object()) {
        cfg.epsilon = j.value("epsilon", cfg.epsilon);
        cfg.max_iters = j.value("max_iters", cfg.max_iters);
        cfg.max_linesearch = j.value("max_linesearch", cfg.max_linesearch);
        cfg.lbfgs_history = j.value("lbfgs_history", cfg.lbfgs_history);
    }
    return cfg;
}

TrainMode mode_from_string(const std::string& m) {
    if (m == "supervised") return TrainMode::Supervised;
    if (m == "unsupervised") return TrainMode::Unsupervised;
    throw ConfigError("mode must be 'supervised' or 'unsupervised', got '" + m + "'");
}

SolveMethod method_from_string(const std::string& m) {
    if (m == "lbfgs") return SolveMethod::Lbfgs;
    if (m == "projective_newton") return SolveMethod::ProjectiveNewton;
    throw ConfigError("method must be 'lbfgs' or 'projective_newton', got '" + m + "'");
}

// ---- gen-data -----------------------------------------------------------------

int cmd_gen_data(Common& c) {
    load_config(c);
    const Scenario scenario = load_scenario_ref(c);
    const std::uint64_t seed = c.seed(1);
    SolverConfig solver = solver_from_json(c.config.value("solver", json::object()), scenario.dt);

    const DatasetGenResult result = generate_dataset(scenario, solver, seed);
    json episodes = json::array();
    for (const EpisodeLog& e : result.episodes)
        episodes.push_back({{"seed", e.seed}, {"steps", e.steps}, {"dropped", e.dropped}});
    const json extra = {{"scenario", scenario.name}, {"seed", seed}, {"episodes", episodes}};
    save_dataset(result.train, (fs::path(c.out_dir) / "train").string(), extra);
    save_dataset(result.test, (fs::path(c.out_dir) / "test").string(), extra);
    write_manifest(c.out_dir, "gen-data", c.config_path, seed,
                   {"train/manifest.json", "train/snapshots.bin", "test/manifest.json",
                    "test/snapshots.bin"},
                   {{"train_frames", result.train.frames()}, {"test_frames", result.test.frames()}});
    std::printf("gen-data: %ld train frames, %ld test frames\n", result.train.frames(),
                result.test.frames());
    return 0;
}

// ---- train ----------------------------------------------------------------------

TrainConfig train_config_from_json(const json& j) {
    TrainConfig cfg;
    cfg.mode = mode_from_string(j.value("mode", "supervised"));
    cfg.lambda_ls = j.value("lambda_ls", 0.0);
    cfg.order = j.value("order", 2);
    cfg.lambda_rep = j.value("lambda_rep", 1.0);
    cfg.sigma = j.value("sigma", 1.0);
    cfg.batch_size = j.value("batch_size", 32);
    cfg.learning_rate = j.value("learning_rate", 1e-4);
    cfg.lr_stage2 = j.value("lr_stage2", 0.0);
    cfg.cosine_decay = j.value("cosine_decay", true);
    cfg.stage1_steps = j.value("stage1_steps", 0);
    cfg.stage2_steps = j.value("stage2_steps", 0);
    cfg.arch_hidden_layers = j.value("hidden_layers", 5);
    cfg.arch_hidden_width = j.value("hidden_width", 0);
    cfg.arch_activation = activation_from_string(j.value("activation", "silu"));
    if (j.contains("cubature") && j.at("cubature").is_object()) {
        const json& cu = j.at("cubature");
        if (cu.value("full", false)) cfg.cubature_fraction = 1.0;
        cfg.cubature_fraction = cu.value("fraction", cfg.cubature_fraction);
        cfg.cubature_samples = cu.value("samples", 0);
    }
    return cfg;
}

int cmd_train(Common& c) {
    load_config(c);
    const Scenario scenario = load_scenario_ref(c);
    TrainConfig cfg = train_config_from_json(c.config);
    cfg.seed = c.seed(1);
    cfg.validate();

    Dataset dataset;
    const Dataset* dataset_ptr = nullptr;
    if (cfg.mode == TrainMode::Supervised) {
        if (!c.config.contains("dataset"))
            throw ConfigError("supervised training needs a 'dataset' directory");
        dataset = load_dataset(resolve(c, c.config.at("dataset").get<std::string>()));
        dataset_ptr = &dataset;
    }

    std::optional<CubatureSet> preset;
    if (c.config.contains("cubature") && c.config.at("cubature").is_object() &&
        c.config.at("cubature").contains("path"))
        preset = load_cubature(resolve(c, c.config.at("cubature").at("path").get<std::string>()));

    const PotentialContext ctx = scenario.context();
    const MassMatrix mass = lump_mass(scenario.mesh, scenario.material);
    const int r = c.config.value("r", 4);
    SubspaceModel model = make_model_for_training(cfg, r, scenario.mesh, dataset_ptr);

    std::ofstream metrics(fs::path(c.out_dir) / "metrics.jsonl");
    TrainOutput out = train(std::move(model), cfg, dataset_ptr, ctx, mass, preset, &metrics);

    const std::string stage1_path = (fs::path(c.out_dir) / "stage1.ckpt").string();
    const std::string final_path = (fs::path(c.out_dir) / "model.ckpt").string();
    save_checkpoint(out.stage1, stage1_path);
    save_checkpoint(out.model, final_path);
    out.cubature.provenance = hash_hex(fnv1a64_file(stage1_path));
    save_cubature(out.cubature, (fs::path(c.out_dir) / "cubature.json").string());
    write_manifest(c.out_dir, "train", c.config_path, cfg.seed,
                   {"stage1.ckpt", "model.ckpt", "cubature.json", "metrics.jsonl"},
                   {{"diverged", out.diverged}, {"r", r}, {"n", scenario.mesh.num_dofs()}});
    if (out.diverged) {
        std::fprintf(stderr, "train: diverged; saved last good checkpoint\n");
        return 1;
    }
    std::printf("train: done (%zu metric rows)\n", out.metrics.size());
    return 0;
}

// ---- cubature --------------------------------------------------------------------

int cmd_cubature(Common& c) {
    load_config(c);
    const Scenario scenario = load_scenario_ref(c);
    const std::string ckpt = resolve(c, c.config.at("checkpoint").get<std::string>());
    const SubspaceModel model = load_checkpoint(ckpt);
    const TrainMode mode = mode_from_string(c.config.value("mode", "supervised"));
    const std::uint64_t seed = c.seed(3);

    Dataset dataset;
    const Dataset* dataset_ptr = nullptr;
    if (mode == TrainMode::Supervised) {
        dataset = load_dataset(resolve(c, c.config.at("dataset").get<std::string>()));
        dataset_ptr = &dataset;
    }

    int target = c.config.value("target_S", 0);
    if (target <= 0) {
        const double fraction = c.config.value("target_fraction", 0.15);
        target = std::max(1, static_cast<int>(fraction * scenario.mesh.num_elements()));
    }
    const PotentialContext ctx = scenario.context();
    Rng rng = substream(seed, 4);
    CubatureSet set = fit_cubature(model, ctx, mode, dataset_ptr, target,
                                   c.config.value("samples", 0), rng);
    set.provenance = hash_hex(fnv1a64_file(ckpt));
    save_cubature(set, (fs::path(c.out_dir) / "cubature.json").string());
    write_manifest(c.out_dir, "cubature", c.config_path, seed, {"cubature.json"},
                   {{"S", set.size()}, {"fit_error", set.fit_error}});
    std::printf("cubature: S=%d fit_error=%.4f\n", set.size(), set.fit_error);
    return 0;
}

// ---- simulate --------------------------------------------------------------------

std::optional<ElementSubset> runtime_cubature_from_config(const Common& c, const json& j,
                                                          const Mesh& mesh) {
    if (!j.is_string()) return std::nullopt;
    const std::string v = j.get<std::string>();
    if (v.empty() || v == "none") return std::nullopt;
    if (v == "full") return ElementSubset::full(mesh.num_elements());
    return load_cubature(resolve(c, v)).to_subset();
}

int cmd_simulate(Common& c) {
    load_config(c);
    const Scenario scenario = load_scenario_ref(c);
    const SubspaceModel model =
        load_checkpoint(resolve(c, c.config.at("checkpoint").get<std::string>()));
    if (model.n != scenario.mesh.num_dofs())
        throw ConfigError("checkpoint n = " + std::to_string(model.n) +
                          " does not match the scenario's " +
                          std::to_string(scenario.mesh.num_dofs()));

    SolverConfig cfg = solver_from_json(c.config.value("solver", json::object()), scenario.dt);
    cfg.epsilon = c.config.value("epsilon", cfg.epsilon);
    cfg.method = method_from_string(c.config.value("method", "lbfgs"));
    cfg.runtime_cubature = runtime_cubature_from_config(
        c, c.config.value("runtime_cubature", json()), scenario.mesh);

    const int steps = c.config.value("steps", 100);
    const std::uint64_t replay_seed = c.seed(c.config.value("replay_seed", 7));
    Rng rng = substream(replay_seed, 7);
    const std::vector<Interaction> interactions = replay_interactions(scenario, steps, rng);

    const PotentialContext ctx = scenario.context();
    const MassMatrix mass = lump_mass(scenario.mesh, scenario.material);
    SimState state = rest_state(scenario.mesh, model.r);
    if (model.has_encoder()) state.z = encode(model, dof_pack(scenario.mesh, state.positions));

    const bool record = c.config.value("record_snapshots", false);
    std::ofstream traj(fs::path(c.out_dir) / "trajectory.jsonl");
    std::ofstream snaps;
    if (record) snaps.open(fs::path(c.out_dir) / "snapshots.bin", std::ios::binary);

    char num[64];
    for (int step = 0; step < steps; ++step) {
        const FrameInput frame = frame_at(scenario, mass, interactions, step, state.t + scenario.dt);
        const ExitReport rep = reduced_step(state, frame, model, ctx, mass, cfg, scenario.quasi_static);
        traj << "{\"step\":" << step << ",\"t\":";
        std::snprintf(num, sizeof(num), "%.17g", state.t);
        traj << num << ",\"z\":[";
        for (int i = 0; i < model.r; ++i) {
            std::snprintf(num, sizeof(num), "%.17g", state.z[i]);
            traj << (i ? "," : "") << num;
        }
        traj << "],\"exit\":\"" << exit_code_name(rep.code) << "\",\"iterations\":" << rep.iterations
             << ",\"grad_inf\":";
        std::snprintf(num, sizeof(num), "%.17g", rep.final_grad_inf_norm);
        traj << num << "}\n";
        if (record) {
            const Eigen::VectorXd q = dof_pack(scenario.mesh, state.positions);
            snaps.write(reinterpret_cast<const char*>(q.data()),
                        q.size() * static_cast<long>(sizeof(double)));
        }
    }
    std::vector<std::string> outputs{"trajectory.jsonl"};
    if (record) outputs.push_back("snapshots.bin");
    write_manifest(c.out_dir, "simulate", c.config_path, replay_seed, outputs,
                   {{"steps", steps}, {"epsilon", cfg.epsilon}});
    std::printf("simulate: %d steps done\n", steps);
    return 0;
}

// ---- bench -----------------------------------------------------------------------

int cmd_bench(Common& c) {
    load_config(c);
    const Scenario scenario = load_scenario_ref(c);
    const TrainMode mode = mode_from_string(c.config.value("mode", "supervised"));

    std::map<std::string, SubspaceModel> models;
    for (const auto& [name, path] : c.config.at("models").items())
        models.emplace(name, load_checkpoint(resolve(c, path.get<std::string>())));

    Dataset testset;
    const Dataset* testset_ptr = nullptr;
    if (c.config.contains("dataset")) {
        testset = load_dataset(resolve(c, c.config.at("dataset").get<std::string>()));
        testset_ptr = &testset;
    }

    BenchOptions options;
    options.solver = solver_from_json(c.config.value("solver", json::object()), scenario.dt);
    if (c.config.contains("epsilons"))
        options.epsilons = c.config.at("epsilons").get<std::vector<double>>();
    if (c.config.contains("methods")) {
        options.methods.clear();
        for (const auto& m : c.config.at("methods"))
            options.methods.push_back(method_from_string(m.get<std::string>()));
    }
    options.steps = c.config.value("steps", 200);
    options.replay_seed = c.seed(c.config.value("replay_seed", 7));
    options.lipschitz_samples = c.config.value("lipschitz_samples", 64);
    options.lipschitz_seed = c.config.value("lipschitz_seed", 11);

    const BenchRecord record = run_benchmark(scenario, models, options, mode, testset_ptr);
    write_exit_table_csv(record, (fs::path(c.out_dir) / "exit_table.csv").string());
    write_summary_csv(record, (fs::path(c.out_dir) / "summary.csv").string());
    write_timing_csv(record, (fs::path(c.out_dir) / "timing.csv").string());
    write_manifest(c.out_dir, "bench", c.config_path, options.replay_seed,
                   {"exit_table.csv", "summary.csv", "timing.csv"});
    std::printf("bench: %zu cells\n", record.cells.size());
    return 0;
}

// ---- lipschitz --------------------------------------------------------------------

int cmd_lipschitz(Common& c) {
    load_config(c);
    const Scenario scenario = load_scenario_ref(c);
    const SubspaceModel model =
        load_checkpoint(resolve(c, c.config.at("checkpoint").get<std::string>()));
    const TrainMode mode = mode_from_string(c.config.value("mode", "supervised"));
    const std::uint64_t seed = c.seed(11);

    Dataset dataset;
    const Dataset* dataset_ptr = nullptr;
    if (c.config.contains("dataset")) {
        dataset = load_dataset(resolve(c, c.config.at("dataset").get<std::string>()));
        dataset_ptr = &dataset;
    }
    std::optional<CubatureSet> cub;
    if (c.config.contains("cubature") && c.config.at("cubature").is_string())
        cub = load_cubature(resolve(c, c.config.at("cubature").get<std::string>()));

    std::vector<int> orders{0, 1, 2};
    if (c.config.contains("orders")) orders = c.config.at("orders").get<std::vector<int>>();
    else if (c.config.contains("order")) orders = {c.config.at("order").get<int>()};
    const int samples = c.config.value("samples", 64);

    const PotentialContext ctx = scenario.context();
    json result;
    result["samples"] = samples;
    result["cubature"] = cub ? "labeled" : "full";
    for (int o : orders)
        result["order" + std::to_string(o)] = estimate_lipschitz(
            model, ctx, mode, dataset_ptr, o, samples, seed, cub ? &*cub : nullptr);

    std::ofstream out(fs::path(c.out_dir) / "lipschitz.json");
    out << result.dump(2) << "\n";
    write_manifest(c.out_dir, "lipschitz", c.config_path, seed, {"lipschitz.json"});
    std::printf("lipschitz: %s\n", result.dump().c_str());
    return 0;
}

// ---- project ----------------------------------------------------------------------

int cmd_project(Common& c) {
    load_config(c);
    const Scenario scenario = load_scenario_ref(c);
    const SubspaceModel model =
        load_checkpoint(resolve(c, c.config.at("checkpoint").get<std::string>()));

    std::vector<Eigen::VectorXd> states;
    const json& src = c.config.at("states");
    if (src.is_string()) {
        const Dataset d = load_dataset(resolve(c, src.get<std::string>()));
        for (long i = 0; i < d.frames(); ++i) states.push_back(d.snapshots.row(i).transpose());
    } else {
        const std::string bin = resolve(c, src.at("snapshots").get<std::string>());
        std::ifstream in(bin, std::ios::binary);
        if (!in) throw ConfigError("cannot open snapshots file: " + bin);
        const long n = scenario.mesh.num_dofs();
        Eigen::VectorXd row(n);
        while (in.read(reinterpret_cast<char*>(row.data()), n * static_cast<long>(sizeof(double))))
            states.push_back(row);
    }
    const int max_states = c.config.value("max_states", 0);
    if (max_states > 0 && static_cast<int>(states.size()) > max_states)
        states.resize(max_states);

    SolverConfig cfg;
    cfg.epsilon = c.config.value("epsilon", 1e-8);
    cfg.dt = scenario.dt;
    const MassMatrix mass = lump_mass(scenario.mesh, scenario.material);
    const auto stats = projection_error(model, scenario.mesh, mass, states, cfg);

    std::ofstream out(fs::path(c.out_dir) / "projection.csv");
    out << "state,vertex_mean_error,m_norm_error,init_m_norm_error,converged\n";
    char buf[256];
    double mean = 0.0;
    for (std::size_t i = 0; i < stats.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.6e,%.6e,%.6e,%d", i, stats[i].vertex_mean_error,
                      stats[i].m_norm_error, stats[i].init_m_norm_error,
                      stats[i].converged ? 1 : 0);
        out << buf << "\n";
        mean += stats[i].vertex_mean_error;
    }
    if (!stats.empty()) mean /= static_cast<double>(stats.size());
    write_manifest(c.out_dir, "project", c.config_path, c.seed(0), {"projection.csv"},
                   {{"states", stats.size()}, {"mean_vertex_error", mean}});
    std::printf("project: %zu states, mean vertex error %.6e\n", stats.size(), mean);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lipsub: Lipschitz-regularized neural subspace simulation"};
    app.require_subcommand(1);

    Common c;
    std::map<std::string, int (*)(Common&)> handlers = {
        {"gen-data", cmd_gen_data}, {"train", cmd_train},     {"cubature", cmd_cubature},
        {"simulate", cmd_simulate}, {"bench", cmd_bench},     {"lipschitz", cmd_lipschitz},
        {"project", cmd_project},
    };
    for (auto& [name, fn] : handlers) {
        CLI::App* sub = app.add_subcommand(name);
        add_common(sub, c);
    }

    CLI11_PARSE(app, argc, argv);

    const std::string sub = app.get_subcommands().front()->get_name();
    try {
        return handlers.at(sub)(c);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "lipsub %s: %s\n", sub.c_str(), e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "lipsub %s: %s\n", sub.c_str(), e.what());
        return 1;
    }
}
