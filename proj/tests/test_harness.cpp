#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "metalab/harness.hpp"
#include "metalab/rl_audit.hpp"
#include "metalab/runner.hpp"
#include "metalab/serialization.hpp"

using namespace metalab;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    REQUIRE(file.good());
    return std::string(std::istreambuf_iterator<char>(file), std::istreambuf_iterator<char>());
}

std::string temp_path(const std::string& name) { return "harness_test_" + name; }

void write_config(const std::string& path, const std::string& body) {
    std::ofstream file(path, std::ios::trunc);
    file << body;
}

}  // namespace

TEST_CASE("mdp families") {
    MdpFamilySpec spec;
    spec.n_tasks = 4;
    SUBCASE("zero perturbation yields identical tasks") {
        spec.delta = 0.0;
        const MetaRlTaskSet set = generate_mdp_family(spec, 91);
        for (int i = 1; i < set.n_tasks(); ++i) {
            CHECK((set.tasks[i].transition - set.tasks[0].transition).cwiseAbs().maxCoeff() == 0.0);
            CHECK((set.tasks[i].reward - set.tasks[0].reward).cwiseAbs().maxCoeff() == 0.0);
        }
    }
    SUBCASE("every generated task validates") {
        spec.delta = 0.3;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const MetaRlTaskSet set = generate_mdp_family(spec, seed);
            set.validate();
            for (const auto& task : set.tasks)
                CHECK(task.transition.minCoeff() >= spec.eps_mix / spec.n_states - 1e-15);
        }
    }
    SUBCASE("generation is deterministic per seed") {
        const MetaRlTaskSet a = generate_mdp_family(spec, 17);
        const MetaRlTaskSet b = generate_mdp_family(spec, 17);
        CHECK((a.tasks[0].transition - b.tasks[0].transition).cwiseAbs().maxCoeff() == 0.0);
        CHECK((a.energy->features(Vec::Zero(a.energy->dim())) -
               b.energy->features(Vec::Zero(b.energy->dim())))
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }
    SUBCASE("concentrability across perturbation scales stays admissible") {
        // The drift of the constant with delta is reported, not asserted.
        for (double delta : {0.0, 0.05, 0.1, 0.2}) {
            spec.delta = delta;
            const MetaRlTaskSet set = generate_mdp_family(spec, 23);
            const double c0 = concentrability(set, Vec::Zero(set.energy->dim()));
            CHECK(c0 >= 1.0 - 1e-12);
            MESSAGE("delta ", delta, " -> c0 ", c0);
        }
    }
}

TEST_CASE("sl families") {
    SlFamilySpec spec;
    SUBCASE("zero perturbation yields identical tasks") {
        spec.delta = 0.0;
        const SlTaskSet set = generate_sl_family(spec, 37);
        for (int i = 1; i < set.n_tasks(); ++i)
            CHECK((set.tasks[i].cond_mean - set.tasks[0].cond_mean).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("full finite support stays within the label bound") {
        spec.delta = 0.4;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const SlTaskSet set = generate_sl_family(spec, seed);
            set.validate();
            for (const auto& task : set.tasks)
                for (const auto& ls : task.labels)
                    CHECK(ls.values.cwiseAbs().maxCoeff() <= spec.y_max + 1e-12);
        }
    }
    SUBCASE("marginals are shared and conditional means are exact") {
        const SlTaskSet set = generate_sl_family(spec, 41);
        CHECK((set.marginal.array() - 1.0 / spec.domain_size).abs().maxCoeff() < 1e-15);
        for (const auto& task : set.tasks)
            for (int x = 0; x < set.domain_size(); ++x)
                CHECK(task.labels[x].values.dot(task.labels[x].probs) ==
                      doctest::Approx(task.cond_mean(x)).epsilon(1e-12));
    }
}

TEST_CASE("finite difference oracle") {
    SUBCASE("quadratic") {
        const Vec p = Vec::LinSpaced(4, -1.0, 2.0);
        const Vec grad = finite_diff_gradient(
            [](const Vec& x) { return x.squaredNorm(); }, p, 1e-6);
        CHECK((grad - 2.0 * p).cwiseAbs().maxCoeff() < 1e-8);
    }
    SUBCASE("linear functions are differentiated exactly") {
        Vec w(3);
        w << 0.5, -1.25, 2.0;
        const Vec grad = finite_diff_gradient(
            [&](const Vec& x) { return w.dot(x); }, Vec::Zero(3), 1e-4);
        CHECK((grad - w).cwiseAbs().maxCoeff() < 1e-10);
    }
    SUBCASE("rejects bad steps and non-finite objectives") {
        CHECK_THROWS_AS(
            finite_diff_gradient([](const Vec&) { return 0.0; }, Vec::Zero(2), 0.0),
            std::invalid_argument);
        CHECK_THROWS_AS(finite_diff_gradient(
                            [](const Vec&) { return std::numeric_limits<double>::quiet_NaN(); },
                            Vec::Zero(2), 1e-6),
                        std::runtime_error);
    }
}

TEST_CASE("csv writer") {
    CsvWriter csv({"a", "b"});
    csv.add_row({1.0, 0.5});
    csv.add_row({2.0, -1e-17});
    CHECK(csv.str() == "a,b\n1,0.5\n2,-1.0000000000000001e-17\n");
    CHECK_THROWS_AS(csv.add_row({1.0}), std::invalid_argument);

    const std::string path = temp_path("writer.csv");
    csv.write_atomic(path);
    CHECK(slurp(path) == csv.str());
    std::remove(path.c_str());
}

TEST_CASE("config parsing is strict") {
    const std::string path = temp_path("config.json");
    SUBCASE("unknown keys are rejected") {
        write_config(path, R"({"mode": "train-rl", "unknown_knob": 3})");
        CHECK_THROWS_WITH_AS(ExperimentConfig::from_file(path),
                             doctest::Contains("unknown_knob"), std::invalid_argument);
    }
    SUBCASE("bad mode is rejected") {
        write_config(path, R"({"mode": "train-everything"})");
        ExperimentConfig config = ExperimentConfig::from_file(path);
        CHECK_THROWS_AS(config.validate(), std::invalid_argument);
    }
    SUBCASE("defaults satisfy validation") {
        write_config(path, R"({"mode": "gradcheck"})");
        ExperimentConfig config = ExperimentConfig::from_file(path);
        config.validate();
        CHECK(config.seeds == 1);
        CHECK(config.tau == 1.0);
    }
    std::remove(path.c_str());
}

TEST_CASE("experiment pipelines are deterministic") {
    const std::string config_path = temp_path("train.json");
    const std::string out_a = temp_path("a.csv");
    const std::string out_b = temp_path("b.csv");
    write_config(config_path,
                 R"({"mode": "train-rl", "seed": 5, "iterations": 40, "n_states": 4,
                     "n_actions": 2, "n_tasks": 2, "feature_dim": 4})");
    const ExperimentConfig config = ExperimentConfig::from_file(config_path);
    CHECK(run_experiment(config, out_a) == 0);
    CHECK(run_experiment(config, out_b) == 0);
    CHECK(slurp(out_a) == slurp(out_b));
    CHECK(slurp(out_a).find("iteration,objective,grad_norm,epsilon\n") == 0);
    std::remove(config_path.c_str());
    std::remove(out_a.c_str());
    std::remove(out_b.c_str());
}

TEST_CASE("cli entry point") {
    SUBCASE("missing configuration file fails with a validation exit") {
        const char* argv[] = {"metalab", "train-rl", "--config", "does_not_exist.json",
                              "--out", "unused.csv"};
        CHECK(run_cli(6, const_cast<char**>(argv)) == 1);
    }
    SUBCASE("missing required options fail") {
        const char* argv[] = {"metalab", "train-rl"};
        CHECK(run_cli(2, const_cast<char**>(argv)) == 1);
    }
    SUBCASE("an audit run writes holds rows and exits cleanly") {
        const std::string config_path = temp_path("audit.json");
        const std::string out = temp_path("audit.csv");
        write_config(config_path,
                     R"({"mode": "audit-rl", "seed": 3, "seeds": 2, "iterations": 60,
                         "n_states": 4, "n_actions": 2, "n_tasks": 2, "feature_dim": 4,
                         "n_starts": 3, "star_iterations": 60, "radius": 8.0})");
        const char* argv[] = {"metalab", "audit-rl", "--config", config_path.c_str(),
                              "--out", out.c_str()};
        CHECK(run_cli(6, const_cast<char**>(argv)) == 0);
        const std::string body = slurp(out);
        CHECK(body.find("seed,lhs,epsilon,radius,c0,const,approx_error,rhs,holds,"
                        "degenerate_points") == 0);
        std::remove(config_path.c_str());
        std::remove(out.c_str());
    }
}

TEST_CASE("audit-sl pipeline writes its documented schema") {
    ExperimentConfig config;
    config.mode = "audit-sl";
    config.sl_audit = "kernel";
    config.seed = 2;
    config.seeds = 1;
    config.iterations = 60;
    config.n_starts = 2;
    config.star_iterations = 60;
    config.alpha = 5e-2;
    const std::string out = temp_path("audit_sl.csv");
    CHECK(run_experiment(config, out) == 0);
    CHECK(slurp(out).find("seed,lhs,epsilon,radius,term_ii,approx_error,rhs,holds,"
                          "degenerate_points\n") == 0);
    std::remove(out.c_str());
}

TEST_CASE("networks reconstruct from a seed document") {
    const TwoLayerNet net = TwoLayerNet::init_symmetric(16, 4, 77);
    Json by_seed;
    by_seed["m"] = 16;
    by_seed["d"] = 4;
    by_seed["seed"] = 77;
    const TwoLayerNet from_seed = net_from_json(by_seed);
    CHECK((from_seed.w_init - net.w_init).cwiseAbs().maxCoeff() == 0.0);

    Vec current = net.w_init;
    current(3) += 0.25;
    const Json explicit_doc = net_to_json(net, &current);
    Vec restored;
    const TwoLayerNet from_explicit = net_from_json(explicit_doc, &restored);
    CHECK((from_explicit.w_init - net.w_init).cwiseAbs().maxCoeff() == 0.0);
    CHECK((restored - current).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("task sets round-trip through their documents") {
    MdpFamilySpec spec;
    spec.n_states = 3;
    spec.n_actions = 2;
    spec.n_tasks = 2;
    const MetaRlTaskSet set = generate_mdp_family(spec, 10);
    const Json doc = rl_task_set_to_json(set);
    const MetaRlTaskSet back = rl_task_set_from_json(doc);
    CHECK((back.tasks[1].transition - set.tasks[1].transition).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.tau == set.tau);

    SlFamilySpec sl_spec;
    sl_spec.domain_size = 6;
    const SlTaskSet sl = generate_sl_family(sl_spec, 7);
    const SlTaskSet sl_back = sl_task_set_from_json(sl_task_set_to_json(sl));
    CHECK((sl_back.domain - sl.domain).cwiseAbs().maxCoeff() == 0.0);
    // The conditional means are recomputed from the serialized label sets.
    CHECK((sl_back.tasks[0].cond_mean - sl.tasks[0].cond_mean).cwiseAbs().maxCoeff() < 1e-15);
}
