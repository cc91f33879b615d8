#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "metalab/trust_region.hpp"

using namespace metalab;

namespace {

struct Problem {
    Vec target;
    Mat features;
    Vec weights;
};

Problem random_problem(std::mt19937_64& rng, int rows, int cols, bool noisy) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> positive(0.1, 1.0);
    Problem p;
    p.features.resize(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) p.features(r, c) = gauss(rng);
    p.weights.resize(rows);
    for (int r = 0; r < rows; ++r) p.weights(r) = positive(rng);
    p.weights /= p.weights.sum();
    Vec truth(cols);
    for (int c = 0; c < cols; ++c) truth(c) = gauss(rng);
    p.target = p.features * truth;
    if (noisy)
        for (int r = 0; r < rows; ++r) p.target(r) += gauss(rng);
    return p;
}

double weighted_residual(const Problem& p, const Vec& v) {
    return ((p.target - p.features * v).array().square() * p.weights.array()).sum();
}

// Projected gradient descent run to stationarity; independent of the solver.
Vec projected_gradient_oracle(const Problem& p, double radius) {
    Vec v = Vec::Zero(p.features.cols());
    const Mat gram =
        p.features.transpose() * (p.features.array().colwise() * p.weights.array()).matrix();
    const Vec moment =
        p.features.transpose() * (p.weights.array() * p.target.array()).matrix();
    Eigen::SelfAdjointEigenSolver<Mat> eigens(gram);
    const double step = 0.9 / std::max(eigens.eigenvalues().maxCoeff(), 1e-12);
    for (int iter = 0; iter < 200000; ++iter) {
        const Vec grad = 2.0 * (gram * v - moment);
        Vec next = v - step * grad;
        if (next.norm() > radius) next *= radius / next.norm();
        if ((next - v).norm() < 1e-13) {
            v = next;
            break;
        }
        v = next;
    }
    return v;
}

}  // namespace

TEST_CASE("recovers an exactly representable target") {
    std::mt19937_64 rng(101);
    const Problem p = random_problem(rng, 40, 6, /*noisy=*/false);
    const Vec truth = p.features.colPivHouseholderQr().solve(p.target);
    const LinearFit fit = best_linear_fit(p.target, p.features, p.weights, truth.norm() + 1.0);
    CHECK(fit.residual < 1e-10);
    CHECK((fit.v - truth).norm() < 1e-8);
}

TEST_CASE("inactive constraint reproduces unconstrained least squares") {
    std::mt19937_64 rng(103);
    const Problem p = random_problem(rng, 50, 5, /*noisy=*/true);
    const Mat design = p.features.array().colwise() * p.weights.array().sqrt();
    const Vec b = (p.target.array() * p.weights.array().sqrt()).matrix();
    const Vec unconstrained = design.colPivHouseholderQr().solve(b);
    const LinearFit fit = best_linear_fit(p.target, p.features, p.weights, 1e6);
    CHECK(std::abs(fit.residual - (b - design * unconstrained).norm()) < 1e-10);
    CHECK(fit.ridge == 0.0);
}

TEST_CASE("binding constraint matches the projected-gradient oracle") {
    std::mt19937_64 rng(107);
    for (int rep = 0; rep < 8; ++rep) {
        const Problem p = random_problem(rng, 30, 5, /*noisy=*/true);
        const double radius = 0.25;
        const LinearFit fit = best_linear_fit(p.target, p.features, p.weights, radius);
        CHECK(fit.v.norm() <= radius + 1e-9);
        const Vec oracle = projected_gradient_oracle(p, radius);
        CHECK(std::abs(std::sqrt(weighted_residual(p, fit.v)) -
                       std::sqrt(weighted_residual(p, oracle))) < 1e-8);
    }
}

TEST_CASE("the constrained norm hits the radius within tolerance") {
    std::mt19937_64 rng(109);
    const Problem p = random_problem(rng, 30, 4, /*noisy=*/true);
    const LinearFit fit = best_linear_fit(p.target, p.features, p.weights, 0.1);
    CHECK(fit.ridge > 0.0);
    CHECK(std::abs(fit.v.norm() - 0.1) < 1e-8);
}

TEST_CASE("residual is non-increasing in the radius") {
    std::mt19937_64 rng(113);
    const Problem p = random_problem(rng, 25, 6, /*noisy=*/true);
    double previous = std::numeric_limits<double>::infinity();
    for (double radius : {0.01, 0.05, 0.2, 1.0, 5.0, 50.0}) {
        const double residual = best_linear_fit(p.target, p.features, p.weights, radius).residual;
        CHECK(residual <= previous + 1e-12);
        previous = residual;
    }
}

TEST_CASE("rank-deficient designs take the minimum-norm representative") {
    Mat features(4, 3);
    features << 1, 1, 0, 0, 0, 1, 1, 1, 0, 0, 0, 1;  // column 2 duplicates column 1
    Vec target(4);
    target << 2, 1, 2, 1;
    const Vec weights = Vec::Constant(4, 0.25);
    const LinearFit fit = best_linear_fit(target, features, weights, 100.0);
    CHECK(fit.residual < 1e-12);
    CHECK(std::abs(fit.v(0) - fit.v(1)) < 1e-12);  // minimum norm splits the duplicated weight
}

TEST_CASE("degenerate inputs") {
    SUBCASE("all-zero weights give a zero fit") {
        const LinearFit fit =
            best_linear_fit(Vec::Ones(5), Mat::Identity(5, 5), Vec::Zero(5), 1.0);
        CHECK(fit.residual == 0.0);
        CHECK(fit.v.norm() < 1e-12);
    }
    SUBCASE("invalid arguments") {
        CHECK_THROWS_AS(best_linear_fit(Vec::Ones(3), Mat::Identity(3, 3), Vec::Ones(3), 0.0),
                        std::invalid_argument);
        CHECK_THROWS_AS(best_linear_fit(Vec::Ones(4), Mat::Identity(3, 3), Vec::Ones(3), 1.0),
                        std::invalid_argument);
        Vec negative = Vec::Ones(3);
        negative(1) = -0.5;
        CHECK_THROWS_AS(best_linear_fit(Vec::Ones(3), Mat::Identity(3, 3), negative, 1.0),
                        std::invalid_argument);
    }
}
