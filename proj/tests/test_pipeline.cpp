#include <doctest.h>

#include <sstream>

#include "helpers.hpp"
#include "lipsub/diagnostics.hpp"
#include "lipsub/full_solver.hpp"
#include "lipsub/train.hpp"

using namespace lipsub;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using testutil::rel_err;

namespace {

Scenario small_bar_scenario() {
    Scenario s;
    s.name = "test_bar";
    s.mesh = make_bar_2d(6, 2, 0.6, 0.2);
    s.material.mu = 2e3;
    s.material.lambda = 2e3;
    s.material.density = 100.0;
    s.gravity = (VectorXd(2) << 0.0, -9.8).finished();
    s.dt = 0.05;
    s.interact.force_min = 5.0;
    s.interact.force_max = 20.0;
    s.interact.patch_radius = 0.12;
    s.interact.steps_min = 5;
    s.interact.steps_max = 15;
    s.episodes = 5;
    s.steps_per_episode = 20;
    s.test_fraction = 0.2;
    return s;
}

}  // namespace

TEST_CASE("dataset generation") {
    Scenario s = small_bar_scenario();
    SolverConfig cfg;
    cfg.dt = s.dt;

    SUBCASE("zero interactions and zero gravity stay at rest") {
        Scenario calm = s;
        calm.gravity.setZero();
        calm.interact.force_min = calm.interact.force_max = 0.0;
        calm.episodes = 2;
        const DatasetGenResult r = generate_dataset(calm, cfg, 3);
        REQUIRE(r.train.frames() > 0);
        const VectorXd rest = dof_pack(calm.mesh, calm.mesh.vertices);
        for (long i = 0; i < r.train.frames(); ++i)
            CHECK((r.train.snapshots.row(i).transpose() - rest).lpNorm<Eigen::Infinity>() < 1e-7);
    }
    SUBCASE("fixed seed reproduces the dataset bit-exactly") {
        const DatasetGenResult a = generate_dataset(s, cfg, 42);
        const DatasetGenResult b = generate_dataset(s, cfg, 42);
        CHECK((a.train.snapshots - b.train.snapshots).norm() == 0.0);
        CHECK((a.test.snapshots - b.test.snapshots).norm() == 0.0);
    }
    SUBCASE("frame counts match the episode log") {
        const DatasetGenResult r = generate_dataset(s, cfg, 9);
        long total = 0;
        for (const EpisodeLog& e : r.episodes)
            if (!e.dropped) total += e.steps;
        CHECK(r.train.frames() + r.test.frames() == total);
    }
}

TEST_CASE("training loop") {
    Scenario s = small_bar_scenario();
    SolverConfig gen_cfg;
    gen_cfg.dt = s.dt;
    const DatasetGenResult data = generate_dataset(s, gen_cfg, 11);
    const PotentialContext ctx = s.context();
    const MassMatrix mass = lump_mass(s.mesh, s.material);

    TrainConfig cfg;
    cfg.mode = TrainMode::Supervised;
    cfg.batch_size = 8;
    cfg.learning_rate = 1e-3;
    cfg.stage1_steps = 30;
    cfg.stage2_steps = 10;
    cfg.order = 2;
    cfg.lambda_ls = 1e-6;
    cfg.seed = 5;
    cfg.arch_hidden_layers = 2;
    cfg.arch_hidden_width = 12;
    cfg.cubature_fraction = 0.5;

    SUBCASE("stage2_steps = 0 returns the stage-1 parameters") {
        TrainConfig c = cfg;
        c.stage2_steps = 0;
        SubspaceModel init = make_model_for_training(c, 3, s.mesh, &data.train);
        const TrainOutput out = train(init, c, &data.train, ctx, mass);
        REQUIRE(out.stage1.decoder.size() == out.model.decoder.size());
        for (std::size_t l = 0; l < out.model.decoder.size(); ++l)
            CHECK((out.model.decoder[l].W - out.stage1.decoder[l].W).norm() == 0.0);
    }
    SUBCASE("lambda_ls = 0 matches the disabled Lipschitz path bit-for-bit") {
        TrainConfig c = cfg;
        c.lambda_ls = 0.0;
        SubspaceModel init = make_model_for_training(c, 3, s.mesh, &data.train);
        const TrainOutput with_logging = train(init, c, &data.train, ctx, mass);
        SubspaceModel init2 = make_model_for_training(c, 3, s.mesh, &data.train);
        const TrainOutput disabled =
            train(init2, c, &data.train, ctx, mass, std::nullopt, nullptr, /*disable_ls_path=*/true);
        for (std::size_t l = 0; l < with_logging.model.decoder.size(); ++l) {
            CHECK((with_logging.model.decoder[l].W - disabled.model.decoder[l].W).norm() == 0.0);
            CHECK((with_logging.model.decoder[l].b - disabled.model.decoder[l].b).norm() == 0.0);
        }
        // The lambda = 0 run still logs the Lipschitz loss.
        bool saw_ls = false;
        for (const MetricsRow& row : with_logging.metrics)
            if (row.stage == 2 && row.loss_ls > 0.0) saw_ls = true;
        CHECK(saw_ls);
    }
    SUBCASE("metrics stream carries every component") {
        std::ostringstream stream;
        SubspaceModel init = make_model_for_training(cfg, 3, s.mesh, &data.train);
        const TrainOutput out = train(init, cfg, &data.train, ctx, mass, std::nullopt, &stream);
        CHECK(out.metrics.size() == static_cast<std::size_t>(cfg.stage1_steps + cfg.stage2_steps));
        const std::string text = stream.str();
        CHECK(text.find("\"loss_ls\"") != std::string::npos);
        CHECK(text.find("\"stage\":2") != std::string::npos);
    }
}

TEST_CASE("estimate_lipschitz") {
    const Mesh mesh = make_bar_2d(3, 2, 1.0, 0.4);
    MaterialParams mat;
    mat.mu = 1.5;
    mat.lambda = 1.0;
    const PotentialContext ctx(mesh, mat);
    const int n = mesh.num_dofs();
    Rng rng = substream(501, 0);

    SUBCASE("constant decoder has zero constants at every order") {
        SubspaceModel m = testutil::tiny_model(3, n, 1, 4, 503);
        for (Layer& l : m.decoder) l.W.setZero();
        m.norm_shift = dof_pack(mesh, mesh.vertices);
        const MatrixXd Z = testutil::random_matrix(3, 6, rng);
        Tape::Potential pot{&ctx, ElementSubset::full(mesh.num_elements()),
                            PotentialTerms{true, false, false}};
        for (int order = 0; order <= 2; ++order)
            CHECK(estimate_lipschitz(m, pot, order, Z) == 0.0);
    }
    SUBCASE("two samples reduce to the single pair ratio") {
        SubspaceModel m = testutil::tiny_model(2, n, 1, 6, 505);
        m.norm_shift = dof_pack(mesh, mesh.vertices);
        MatrixXd Z = testutil::random_matrix(2, 2, rng, 0.4);
        Tape::Potential pot{&ctx, ElementSubset::full(mesh.num_elements()),
                            PotentialTerms{true, false, false}};
        const double p1 = reduced_potential(m, pot, Z.col(0));
        const double p2 = reduced_potential(m, pot, Z.col(1));
        const double expected = std::abs(p1 - p2) / (Z.col(0) - Z.col(1)).norm();
        CHECK(rel_err(estimate_lipschitz(m, pot, 0, Z), expected) < 1e-14);
    }
    SUBCASE("matches a brute-force all-pairs oracle") {
        SubspaceModel m = testutil::tiny_model(2, n, 1, 6, 507);
        m.norm_shift = dof_pack(mesh, mesh.vertices);
        const MatrixXd Z = testutil::random_matrix(2, 16, rng, 0.4);
        Tape::Potential pot{&ctx, ElementSubset::full(mesh.num_elements()),
                            PotentialTerms{true, false, false}};
        double oracle = 0.0;
        for (int i = 0; i < 16; ++i)
            for (int j = i + 1; j < 16; ++j) {
                const MatrixXd hi = reduced_potential_hessian(m, pot, Z.col(i));
                const MatrixXd hj = reduced_potential_hessian(m, pot, Z.col(j));
                oracle = std::max(oracle, (hi - hj).norm() / (Z.col(i) - Z.col(j)).norm());
            }
        CHECK(estimate_lipschitz(m, pot, 2, Z) == oracle);
    }
    SUBCASE("supersets of the sample stream never lower the estimate") {
        SubspaceModel m = testutil::tiny_model(2, n, 1, 6, 509);
        m.norm_shift = dof_pack(mesh, mesh.vertices);
        const MatrixXd Z = testutil::random_matrix(2, 12, rng, 0.4);
        Tape::Potential pot{&ctx, ElementSubset::full(mesh.num_elements()),
                            PotentialTerms{true, false, false}};
        double prev = 0.0;
        for (int count : {4, 8, 12}) {
            const double est = estimate_lipschitz(m, pot, 1, Z.leftCols(count));
            CHECK(est >= prev - 1e-15);
            prev = est;
        }
    }
    SUBCASE("sample order does not matter") {
        SubspaceModel m = testutil::tiny_model(2, n, 1, 6, 511);
        m.norm_shift = dof_pack(mesh, mesh.vertices);
        MatrixXd Z = testutil::random_matrix(2, 6, rng, 0.4);
        Tape::Potential pot{&ctx, ElementSubset::full(mesh.num_elements()),
                            PotentialTerms{true, false, false}};
        const double a = estimate_lipschitz(m, pot, 1, Z);
        MatrixXd Zrev(2, 6);
        for (int k = 0; k < 6; ++k) Zrev.col(k) = Z.col(5 - k);
        CHECK(estimate_lipschitz(m, pot, 1, Zrev) == a);
    }
    SUBCASE("duplicate samples are dropped") {
        SubspaceModel m = testutil::tiny_model(2, n, 1, 6, 513);
        m.norm_shift = dof_pack(mesh, mesh.vertices);
        MatrixXd Z = testutil::random_matrix(2, 3, rng, 0.4);
        MatrixXd Zdup(2, 5);
        Zdup << Z, Z.leftCols(2);
        Tape::Potential pot{&ctx, ElementSubset::full(mesh.num_elements()),
                            PotentialTerms{true, false, false}};
        CHECK(estimate_lipschitz(m, pot, 1, Zdup) == estimate_lipschitz(m, pot, 1, Z));
    }
}

TEST_CASE("projection error") {
    const Mesh mesh = make_bar_2d(4, 2, 1.0, 0.4);
    MaterialParams mat;
    const MassMatrix mass = lump_mass(mesh, mat);
    const int n = mesh.num_dofs();
    Rng rng = substream(521, 0);
    SolverConfig cfg;
    cfg.epsilon = 1e-9;

    SUBCASE("on-manifold states project to themselves") {
        const SubspaceModel m = testutil::tiny_model(3, n, 1, 8, 523);
        std::vector<VectorXd> states;
        for (int k = 0; k < 3; ++k) states.push_back(decode(m, testutil::random_vector(3, rng, 0.3)));
        const auto stats = projection_error(m, mesh, mass, states, cfg);
        for (const auto& st : stats) CHECK(st.vertex_mean_error < 1e-6);
    }
    SUBCASE("optimization never exceeds the encoder initialization") {
        const SubspaceModel m = testutil::tiny_model(3, n, 2, 8, 525);
        std::vector<VectorXd> states;
        for (int k = 0; k < 4; ++k)
            states.push_back(dof_pack(mesh, mesh.vertices) + testutil::random_vector(n, rng, 0.05));
        const auto stats = projection_error(m, mesh, mass, states, cfg);
        for (const auto& st : stats) CHECK(st.m_norm_error <= st.init_m_norm_error + 1e-12);
    }
}

TEST_CASE("run_benchmark") {
    Scenario s = small_bar_scenario();
    const int n = s.mesh.num_dofs();
    SolverConfig gen_cfg;
    gen_cfg.dt = s.dt;
    const DatasetGenResult data = generate_dataset(s, gen_cfg, 31);

    TrainConfig tc;
    tc.mode = TrainMode::Supervised;
    tc.batch_size = 8;
    tc.learning_rate = 1e-3;
    tc.stage1_steps = 40;
    tc.stage2_steps = 0;
    tc.seed = 8;
    tc.arch_hidden_layers = 2;
    tc.arch_hidden_width = 12;
    const PotentialContext ctx = s.context();
    const MassMatrix mass = lump_mass(s.mesh, s.material);
    SubspaceModel model = make_model_for_training(tc, 3, s.mesh, &data.train);
    const TrainOutput out = train(model, tc, &data.train, ctx, mass);

    BenchOptions options;
    options.steps = 5;
    options.epsilons = {1e-4, 1e-5};
    options.lipschitz_samples = 8;

    SUBCASE("identical checkpoints produce identical rows") {
        std::map<std::string, SubspaceModel> models{{"ours", out.model}, {"vanilla", out.model}};
        const BenchRecord rec = run_benchmark(s, models, options, TrainMode::Supervised, &data.test);
        REQUIRE(rec.cells.size() == 4);
        for (std::size_t k = 0; k < 2; ++k) {
            const BenchCell& a = rec.cells[k];
            const BenchCell& b = rec.cells[k + 2];
            CHECK(a.mean_iterations == b.mean_iterations);
            CHECK(a.mean_exit_grad_inf == b.mean_exit_grad_inf);
        }
        CHECK(rec.variants[0].lip[2] == rec.variants[1].lip[2]);
    }
    SUBCASE("exit frequencies sum to 100 percent") {
        std::map<std::string, SubspaceModel> models{{"ours", out.model}};
        const BenchRecord rec = run_benchmark(s, models, options, TrainMode::Supervised, &data.test);
        for (const BenchCell& cell : rec.cells) {
            const double sum =
                cell.exit_pct[0] + cell.exit_pct[1] + cell.exit_pct[2] + cell.exit_pct[3];
            CHECK(sum == doctest::Approx(100.0).epsilon(1e-12));
        }
    }
    SUBCASE("mismatched checkpoint dimension is a config error") {
        SubspaceModel bad = testutil::tiny_model(3, n + 2, 1, 4, 527);
        std::map<std::string, SubspaceModel> models{{"ours", bad}};
        CHECK_THROWS_AS(run_benchmark(s, models, options, TrainMode::Supervised, &data.test),
                        std::invalid_argument);
    }
}

TEST_CASE("csv headers match the documented schema") {
    CHECK(std::string(kExitTableHeader) ==
          "scenario,variant,method,epsilon,steps,exit_I_pct,exit_II_pct,exit_III_pct,exit_IV_pct,"
          "mean_exit_grad_inf,mean_exit_grad_inf_I,mean_iterations");
    CHECK(std::string(kSummaryHeader) ==
          "scenario,variant,n,elements,r,lip_order0,lip_order1,lip_order2");
    CHECK(std::string(kTimingHeader) == "scenario,variant,method,epsilon,mean_step_ms");
}
