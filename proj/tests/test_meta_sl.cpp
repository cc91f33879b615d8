#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "metalab/harness.hpp"
#include "metalab/meta_sl.hpp"

using namespace metalab;

namespace {

SlTaskSet family(std::uint64_t seed, int n_tasks = 3, double eta = 0.1, double delta = 0.1,
                 int label_count = 3) {
    SlFamilySpec spec;
    spec.domain_size = 12;
    spec.input_dim = 4;
    spec.feature_dim = 6;
    spec.n_tasks = n_tasks;
    spec.label_count = label_count;
    spec.eta = eta;
    spec.delta = delta;
    return generate_sl_family(spec, seed);
}

Vec random_theta(std::mt19937_64& rng, int dim, double scale = 0.5) {
    std::normal_distribution<double> gauss(0.0, scale);
    Vec theta(dim);
    for (int k = 0; k < dim; ++k) theta(k) = gauss(rng);
    return theta;
}

// Least-squares parameter whose hypothesis matches every conditional mean of
// one task (means are linear in the features by construction).
Vec interpolating_theta(const SlTaskSet& set, int task) {
    const Mat phi = set.model->features(Vec::Zero(set.model->dim()));
    return phi.colPivHouseholderQr().solve(set.tasks[task].cond_mean);
}

}  // namespace

TEST_CASE("risk basics") {
    std::mt19937_64 rng(201);
    SUBCASE("matching a deterministic labeling gives zero risk") {
        const SlTaskSet set = family(2011, 2, 0.1, 0.0, /*label_count=*/1);
        CHECK(risk(set, 0, set.tasks[0].cond_mean) < 1e-24);
    }
    SUBCASE("symmetric unit labels against the zero hypothesis") {
        SlTaskSet set = family(2012, 1);
        for (auto& ls : set.tasks[0].labels) {
            ls.values.resize(2);
            ls.values << -1.0, 1.0;
            ls.probs = Vec::Constant(2, 0.5);
        }
        CHECK(risk(set, 0, Vec::Zero(set.domain_size())) == doctest::Approx(1.0).epsilon(1e-14));
    }
    SUBCASE("independent enumeration oracle") {
        const SlTaskSet set = family(2013);
        const Vec h = random_theta(rng, set.domain_size(), 0.8);
        double expected = 0.0;
        for (int x = 0; x < set.domain_size(); ++x) {
            const SlLabelSet& ls = set.tasks[1].labels[x];
            for (int k = 0; k < ls.values.size(); ++k)
                expected +=
                    set.marginal(x) * ls.probs(k) * std::pow(h(x) - ls.values(k), 2);
        }
        CHECK(std::abs(risk(set, 1, h) - expected) < 1e-12);
    }
}

TEST_CASE("functional derivative of the squared-loss risk") {
    std::mt19937_64 rng(203);
    const SlTaskSet set = family(2031);
    SUBCASE("vanishes at the conditional mean") {
        CHECK(frechet_derivative_sq(set, 0, set.tasks[0].cond_mean).cwiseAbs().maxCoeff() <
              1e-14);
    }
    SUBCASE("directional finite differences") {
        for (int rep = 0; rep < 20; ++rep) {
            const Vec h = random_theta(rng, set.domain_size(), 0.7);
            const Vec direction = random_theta(rng, set.domain_size(), 1.0);
            const double t = 1e-6;
            const double numeric = (risk(set, 2, h + t * direction) - risk(set, 2, h)) / t;
            const Vec delta = frechet_derivative_sq(set, 2, h);
            const double analytic =
                (set.marginal.array() * delta.array() * direction.array()).sum();
            CHECK(std::abs(numeric - analytic) < 1e-5 * (1.0 + std::abs(analytic)));
        }
    }
    SUBCASE("the convexity gap is exactly the squared hypothesis distance") {
        for (int rep = 0; rep < 20; ++rep) {
            const Vec h1 = random_theta(rng, set.domain_size(), 0.7);
            const Vec h2 = random_theta(rng, set.domain_size(), 0.7);
            const Vec delta2 = frechet_derivative_sq(set, 1, h2);
            const double gap =
                risk(set, 1, h1) - risk(set, 1, h2) -
                (set.marginal.array() * delta2.array() * (h1 - h2).array()).sum();
            const double distance_sq =
                (set.marginal.array() * (h1 - h2).array().square()).sum();
            CHECK(std::abs(gap - distance_sq) < 1e-12);
        }
    }
    SUBCASE("the derivative norm is controlled by the risk") {
        for (int rep = 0; rep < 20; ++rep) {
            const Vec h = random_theta(rng, set.domain_size(), 0.7);
            const Vec delta = frechet_derivative_sq(set, 0, h);
            const double norm_sq = (set.marginal.array() * delta.array().square()).sum();
            CHECK(norm_sq <= 4.0 * risk(set, 0, h) + 1e-12);
        }
    }
}

TEST_CASE("inner gradient step") {
    std::mt19937_64 rng(207);
    SUBCASE("no learning rate, no movement") {
        SlTaskSet set = family(2071);
        set.eta = 0.0;
        const Vec theta = random_theta(rng, set.model->dim());
        CHECK((inner_gd_step(set, 0, theta) - theta).norm() == 0.0);
    }
    SUBCASE("a risk minimizer is a fixed point") {
        const SlTaskSet set = family(2072, 2, 0.3, 0.0, /*label_count=*/3);
        const Vec theta = interpolating_theta(set, 0);
        CHECK((inner_gd_step(set, 0, theta) - theta).norm() < 1e-10);
    }
    SUBCASE("risk gradient matches finite differences") {
        const SlTaskSet set = family(2073);
        const Vec theta = random_theta(rng, set.model->dim());
        const Vec analytic = risk_gradient(set, 1, theta);
        const Vec numeric = finite_diff_gradient(
            [&](const Vec& t) { return risk(set, 1, set.model->values(t)); }, theta, 1e-6);
        CHECK((analytic - numeric).norm() / analytic.norm() < 1e-5);
    }
}

TEST_CASE("meta-objective and meta-gradient") {
    std::mt19937_64 rng(211);
    SUBCASE("identical tasks at a shared optimum have zero gradient") {
        SlTaskSet set = family(2111, 3, 0.0, 0.0);
        const Vec theta = interpolating_theta(set, 0);
        CHECK(meta_gradient_sl(set, theta).norm() < 1e-10);
    }
    SUBCASE("finite differences validate the analytic gradient") {
        for (int rep = 0; rep < 4; ++rep) {
            const SlTaskSet set = family(2112 + rep);
            const Vec theta = random_theta(rng, set.model->dim());
            const Vec analytic = meta_gradient_sl(set, theta);
            const Vec numeric = finite_diff_gradient(
                [&](const Vec& t) { return meta_objective_sl(set, t); }, theta, 1e-6);
            CHECK((analytic - numeric).norm() / analytic.norm() < 1e-4);
        }
    }
    SUBCASE("neural parameterization matches finite differences away from kinks") {
        SlFamilySpec spec;
        spec.domain_size = 10;
        spec.input_dim = 4;
        spec.n_tasks = 2;
        spec.neural = true;
        spec.width = 16;
        std::normal_distribution<double> gauss(0.0, 1.0);
        int checked = 0;
        for (int attempt = 0; attempt < 30 && checked < 3; ++attempt) {
            const SlTaskSet set = generate_sl_family(spec, 6000 + attempt);
            const auto* model = dynamic_cast<const NeuralSlModel*>(set.model.get());
            Vec dir(model->dim());
            for (int k = 0; k < dir.size(); ++k) dir(k) = gauss(rng);
            const Vec theta = model->net().w_init + 0.5 * dir / dir.norm();
            const int m = model->net().width, d = model->net().input_dim;
            auto min_preactivation = [&](const Vec& params) {
                Mat w(m, d);
                for (int r = 0; r < m; ++r)
                    for (int c = 0; c < d; ++c) w(r, c) = params(r * d + c);
                return (model->domain() * w.transpose()).cwiseAbs().minCoeff();
            };
            // Both the base and the adapted parameters must sit clear of
            // activation boundaries for the a.e. gradient to apply.
            bool safe = min_preactivation(theta) > 1e-4;
            for (int i = 0; i < set.n_tasks() && safe; ++i)
                safe = min_preactivation(inner_gd_step(set, i, theta)) > 1e-4;
            if (!safe) continue;
            const Vec analytic = meta_gradient_sl(set, theta);
            const Vec numeric = finite_diff_gradient(
                [&](const Vec& t) { return meta_objective_sl(set, t); }, theta, 1e-7);
            CHECK((analytic - numeric).norm() / analytic.norm() < 1e-4);
            ++checked;
        }
        CHECK(checked >= 2);
    }
    SUBCASE("without adaptation the meta-gradient is the mean risk gradient") {
        SlTaskSet set = family(2116);
        set.eta = 0.0;
        const Vec theta = random_theta(rng, set.model->dim());
        Vec expected = Vec::Zero(set.model->dim());
        for (int i = 0; i < set.n_tasks(); ++i) expected += risk_gradient(set, i, theta);
        expected /= set.n_tasks();
        CHECK((meta_gradient_sl(set, theta) - expected).norm() <
              1e-12 * (1.0 + expected.norm()));
    }
}

TEST_CASE("descent loop bookkeeping") {
    std::mt19937_64 rng(223);
    SUBCASE("a stationary start stays fixed") {
        SlTaskSet set = family(2231, 3, 0.0, 0.0);
        const Vec theta = interpolating_theta(set, 0);
        const SlRunState state = run_meta_sl(set, theta, {1e-3}, 20);
        CHECK(state.iteration == 0);
        CHECK((state.theta - theta).norm() == 0.0);
    }
    SUBCASE("small steps decrease the objective monotonically") {
        const SlTaskSet set = family(2232);
        const SlRunState state =
            run_meta_sl(set, random_theta(rng, set.model->dim()), {1e-3}, 60);
        for (size_t it = 1; it < state.objective_history.size(); ++it)
            CHECK(state.objective_history[it] <= state.objective_history[it - 1] + 1e-9);
        CHECK(state.objective_history.size() == static_cast<size_t>(state.iteration) + 1);
    }
    SUBCASE("the reported stationarity level is the final gradient norm") {
        const SlTaskSet set = family(2233);
        const SlRunState state =
            run_meta_sl(set, random_theta(rng, set.model->dim()), {1e-3}, 15);
        CHECK(state.epsilon() ==
              doctest::Approx(meta_gradient_sl(set, state.theta).norm()).epsilon(1e-14));
    }
}

TEST_CASE("adaptation kernel structure") {
    std::mt19937_64 rng(227);
    SlTaskSet set = family(2270);
    const Vec theta = random_theta(rng, set.model->dim());
    const Mat k = sl_kernel_matrix(set, theta);
    CHECK((k - k.transpose()).cwiseAbs().maxCoeff() < 1e-15);
    set.eta = 0.0;
    const Mat identity = sl_kernel_matrix(set, theta);
    CHECK((identity - Mat::Identity(k.rows(), k.cols())).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("hypothesis cache validation") {
    const SlTaskSet set = family(227);
    SlHypothesis h = SlHypothesis::make(set.model, Vec::Ones(set.model->dim()));
    h.validate();
    h.values(0) += 1e-6;
    CHECK_THROWS_AS(h.validate(), std::invalid_argument);
}

TEST_CASE("general-form audit") {
    std::mt19937_64 rng(229);
    SUBCASE("at the optimum the bound holds with zero gap") {
        const SlTaskSet set = family(2291);
        const Vec omega = random_theta(rng, set.model->dim());
        const SlBoundReport report = audit_sl_general(set, omega, omega, 5.0);
        CHECK(std::abs(report.lhs) < 1e-12);
        CHECK(report.holds);
    }
    SUBCASE("random stationary candidates") {
        for (int rep = 0; rep < 5; ++rep) {
            const SlTaskSet set = family(2292 + rep);
            const Vec omega = random_theta(rng, set.model->dim());
            const Vec theta_star =
                best_theta_sl(set, Vec::Zero(set.model->dim()), 4, 150, 5e-2, 0.5, 17 + rep);
            const SlBoundReport report = audit_sl_general(set, omega, theta_star, 8.0);
            CHECK(report.holds);
            CHECK(report.rhs ==
                  doctest::Approx(report.term_i + report.term_ii * report.term_iii)
                      .epsilon(1e-14));
        }
    }
    SUBCASE("a perfectly adapted stationary point kills the density term") {
        const SlTaskSet set = family(2297, 3, 0.2, 0.0, /*label_count=*/3);
        const Vec omega = interpolating_theta(set, 0);
        const SlBoundReport report = audit_sl_general(set, omega, omega, 5.0);
        CHECK(report.term_ii <= 1e-10);
        CHECK(report.lhs <= report.term_i + 1e-9);
    }
}

TEST_CASE("averaged-kernel audit") {
    std::mt19937_64 rng(233);
    SUBCASE("holds on random instances and stays consistent with the general form") {
        for (int rep = 0; rep < 5; ++rep) {
            const SlTaskSet set = family(2331 + rep);
            const Vec omega = random_theta(rng, set.model->dim());
            const Vec theta_star =
                best_theta_sl(set, Vec::Zero(set.model->dim()), 4, 150, 5e-2, 0.5, 29 + rep);
            const SlBoundReport a2 = audit_sl_kernel(set, omega, theta_star, 8.0);
            const SlBoundReport t44 = audit_sl_general(set, omega, theta_star, 8.0);
            CHECK(a2.holds);
            CHECK(t44.holds);
            CHECK(a2.lhs == doctest::Approx(t44.lhs).epsilon(1e-12));
            CHECK(a2.term_i == doctest::Approx(t44.term_i).epsilon(1e-12));
        }
    }
    SUBCASE("without adaptation the features reduce to the raw table") {
        SlTaskSet set = family(2336);
        set.eta = 0.0;
        const Vec omega = random_theta(rng, set.model->dim());
        const Vec theta_star = random_theta(rng, set.model->dim());
        const SlBoundReport report = audit_sl_kernel(set, omega, theta_star, 6.0);
        CHECK(report.holds);
    }
}

TEST_CASE("neural audit") {
    SlFamilySpec spec;
    spec.domain_size = 10;
    spec.input_dim = 4;
    spec.n_tasks = 2;
    spec.eta = 0.1;
    spec.delta = 0.1;
    spec.neural = true;
    spec.width = 32;

    SUBCASE("holds at and away from the optimum") {
        const SlTaskSet set = generate_sl_family(spec, 3001);
        const auto* model = dynamic_cast<const NeuralSlModel*>(set.model.get());
        REQUIRE(model != nullptr);
        const Vec w_init = model->net().w_init;
        std::mt19937_64 rng(3002);
        std::normal_distribution<double> gauss(0.0, 1.0);
        Vec dir(model->dim());
        for (int k = 0; k < dir.size(); ++k) dir(k) = gauss(rng);
        const Vec omega = w_init + 0.5 * dir / dir.norm();

        const SlBoundReport at_opt = audit_sl_neural(set, omega, omega, 1.0);
        CHECK(std::abs(at_opt.lhs) < 1e-12);
        CHECK(at_opt.holds);
        CHECK(at_opt.proxy_bound > 0.0);

        const Vec theta_star =
            best_theta_sl(set, w_init, 4, 120, 5e-2, 0.1, 3003);
        const SlBoundReport report = audit_sl_neural(set, omega, theta_star, 1.0);
        CHECK(report.holds);
        CHECK(report.stationarity == "init_ball");
    }

    SUBCASE("without adaptation it matches the frozen-feature kernel audit") {
        spec.eta = 0.0;
        const SlTaskSet neural_set = generate_sl_family(spec, 3005);
        const auto* model = dynamic_cast<const NeuralSlModel*>(neural_set.model.get());
        REQUIRE(model != nullptr);
        const Vec w_init = model->net().w_init;

        // Positive per-block scaling preserves every activation pattern, so
        // the frozen feature map represents the comparison point exactly.
        std::mt19937_64 rng(3006);
        std::uniform_real_distribution<double> scale(1.2, 1.8);
        Vec theta_star = w_init;
        const int d_in = model->net().input_dim;
        for (int r = 0; r < model->net().width; ++r)
            theta_star.segment(r * d_in, d_in) *= scale(rng);

        const double radius_t = 2.0;
        const SlBoundReport neural_report =
            audit_sl_neural(neural_set, w_init, theta_star, radius_t);

        SlTaskSet linear_set = neural_set;
        linear_set.model = std::make_shared<LinearSlModel>(model->features(w_init));
        const SlBoundReport linear_report =
            audit_sl_kernel(linear_set, w_init, theta_star, radius_t);

        CHECK(std::abs(neural_report.lhs - linear_report.lhs) < 1e-8);
        CHECK(std::abs(neural_report.term_i - linear_report.term_i) < 1e-8);
        CHECK(std::abs(neural_report.term_ii - linear_report.term_ii) < 1e-8);
        CHECK(std::abs(neural_report.term_iii - linear_report.term_iii) < 1e-8);
        CHECK(std::abs(neural_report.rhs - linear_report.rhs) < 1e-8);
        CHECK(neural_report.holds == linear_report.holds);
    }
}

TEST_CASE("task-set validation") {
    SlTaskSet set = family(241);
    SUBCASE("marginal must be strictly positive") {
        set.marginal(0) = 0.0;
        set.marginal /= set.marginal.sum();
        CHECK_THROWS_AS(set.validate(), std::invalid_argument);
    }
    SUBCASE("labels must respect the bound") {
        set.tasks[0].labels[0].values(0) = 2.0 * set.y_max;
        CHECK_THROWS_AS(set.validate(), std::invalid_argument);
    }
    SUBCASE("label probabilities must normalize") {
        set.tasks[0].labels[0].probs(0) += 0.1;
        CHECK_THROWS_AS(set.validate(), std::invalid_argument);
    }
}
