#include "metalab/rl_audit.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "metalab/neural_net.hpp"

namespace metalab {

namespace {

constexpr double kDegenerate = 1e-12;
constexpr double kHoldsSlack = 1e-9;

Vec flatten(const Mat& by_state_action) {
    const int S = static_cast<int>(by_state_action.rows());
    const int A = static_cast<int>(by_state_action.cols());
    Vec flat(S * A);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) flat(s * A + a) = by_state_action(s, a);
    return flat;
}

/// Per-task gradient density g_i against the meta-visitation marginal; the
/// refined gradient is features^T (varsigma_i . g_i) averaged over tasks.
Vec gradient_density(const MetaRlTaskSet& set, const TaskEval& te, double gamma,
                     const Vec& varsigma) {
    const double horizon = 1.0 / (1.0 - gamma);
    const Vec adv_main = flatten(te.main_values.adv);
    const Vec adv_adapted = flatten(te.adapted_values.adv);
    const Vec g_mass =
        te.sigma_init_main.transpose() * (te.sigma_adapted.array() * adv_adapted.array()).matrix();
    Vec g(varsigma.size());
    for (int sa = 0; sa < varsigma.size(); ++sa) {
        if (varsigma(sa) <= 0.0)
            throw std::runtime_error("meta-visitation marginal has zero mass at cell " +
                                     std::to_string(sa));
        const double cond_adv = g_mass(sa) / varsigma(sa);
        g(sa) = horizon * (adv_adapted(sa) * te.sigma_adapted(sa) / varsigma(sa) / set.tau +
                           (gamma * set.eta / set.tau) * horizon * cond_adv * adv_main(sa));
    }
    return g;
}

double constant_factor(const MetaRlTaskSet& set, double c0) {
    const double qm = set.q_max();
    double mean = 0.0;
    for (const auto& task : set.tasks) {
        const double horizon = 1.0 / (1.0 - task.discount);
        mean += horizon * (1.0 + 2.0 * qm * task.discount * set.eta * horizon);
    }
    mean /= static_cast<double>(set.n_tasks());
    return 2.0 * c0 * qm / set.tau * mean;
}

struct RatioTable {
    Vec numerator;    // performance-difference density against the mixed measure
    Vec denominator;  // gradient density against the mixed measure
};

RatioTable f_omega_densities(const MetaRlTaskSet& set, const MetaRlEval& at_omega,
                             const MetaRlEval& at_star, const MetaVisitationSet& mv) {
    const int n = set.n_tasks();
    const int cells = static_cast<int>(mv.mixed.size());
    RatioTable rt;
    rt.numerator = Vec::Zero(cells);
    rt.denominator = Vec::Zero(cells);
    for (int i = 0; i < n; ++i) {
        const double gamma = set.tasks[i].discount;
        const double horizon = 1.0 / (1.0 - gamma);
        const Vec adv_adapted = flatten(at_omega.tasks[i].adapted_values.adv);
        const Vec g = gradient_density(set, at_omega.tasks[i], gamma, mv.marginal[i]);
        rt.numerator += horizon *
                        (adv_adapted.array() * at_star.tasks[i].sigma_adapted.array()).matrix();
        rt.denominator += (g.array() * mv.marginal[i].array()).matrix();
    }
    rt.numerator = (rt.numerator / n).cwiseQuotient(mv.mixed);
    rt.denominator = (rt.denominator / n).cwiseQuotient(mv.mixed);
    return rt;
}

FunctionTable ratio_with_flags(const RatioTable& rt) {
    FunctionTable table;
    table.values = Vec::Zero(rt.numerator.size());
    for (int sa = 0; sa < rt.numerator.size(); ++sa) {
        if (std::abs(rt.denominator(sa)) < kDegenerate)
            table.flagged.push_back(sa);
        else
            table.values(sa) = rt.numerator(sa) / rt.denominator(sa);
    }
    return table;
}

Vec masked_measure(const Vec& measure, const std::vector<int>& flagged) {
    Vec masked = measure;
    for (int sa : flagged) masked(sa) = 0.0;
    return masked;
}

}  // namespace

MetaVisitationSet meta_visitations(const MetaRlTaskSet& set, const MetaRlEval& eval) {
    MetaVisitationSet mv;
    const int cells = static_cast<int>(eval.features.rows());
    mv.mixed = Vec::Zero(cells);
    for (int i = 0; i < set.n_tasks(); ++i) {
        const TaskEval& te = eval.tasks[i];
        Mat joint = te.sigma_init_main.transpose();
        joint.array().rowwise() *= te.sigma_adapted.transpose().array();
        mv.marginal.push_back(joint.rowwise().sum());
        mv.mixed += mv.marginal.back();
        mv.joint.push_back(std::move(joint));
    }
    mv.mixed /= static_cast<double>(set.n_tasks());
    if (mv.mixed.minCoeff() <= 0.0)
        throw std::runtime_error("mixed meta-visitation measure has a zero-mass entry");
    return mv;
}

MetaVisitationSet meta_visitations(const MetaRlTaskSet& set, const Vec& theta) {
    return meta_visitations(set, evaluate_meta_rl(set, theta));
}

double concentrability(const MetaRlTaskSet& set, const MetaRlEval& eval) {
    return concentrability(set, eval, meta_visitations(set, eval));
}

double concentrability(const MetaRlTaskSet& set, const MetaRlEval& eval,
                       const MetaVisitationSet& mv) {
    double c0_sq = 0.0;
    for (int i = 0; i < set.n_tasks(); ++i) {
        const double sigma_ratio =
            (eval.tasks[i].sigma_adapted.array().square() / mv.mixed.array()).sum();
        const double marginal_ratio =
            (mv.marginal[i].array().square() / mv.mixed.array()).sum();
        c0_sq = std::max({c0_sq, sigma_ratio, marginal_ratio});
    }
    return std::sqrt(c0_sq);
}

double concentrability(const MetaRlTaskSet& set, const Vec& theta) {
    return concentrability(set, evaluate_meta_rl(set, theta));
}

FunctionTable f_omega(const MetaRlTaskSet& set, const Vec& omega, const Vec& theta_star) {
    const MetaRlEval at_omega = evaluate_meta_rl(set, omega);
    const MetaRlEval at_star = evaluate_meta_rl(set, theta_star);
    const MetaVisitationSet mv = meta_visitations(set, at_omega);
    return ratio_with_flags(f_omega_densities(set, at_omega, at_star, mv));
}

BoundReport audit_rl_linear(const MetaRlTaskSet& set, const Vec& omega, const Vec& theta_star,
                              double radius) {
    if (radius <= 0.0) throw std::invalid_argument("audit: radius must be positive");
    const MetaRlEval at_omega = evaluate_meta_rl(set, omega);
    const MetaRlEval at_star = evaluate_meta_rl(set, theta_star);
    const MetaVisitationSet mv = meta_visitations(set, at_omega);

    BoundReport report;
    report.stationarity = "unit_ball";
    report.radius = radius;
    report.lhs = at_star.objective - at_omega.objective;
    report.epsilon = meta_gradient_direct(set, at_omega).norm();
    report.term_stationarity = radius * report.epsilon;
    report.c0 = concentrability(set, at_omega, mv);
    report.constant = constant_factor(set, report.c0);

    const FunctionTable table = ratio_with_flags(f_omega_densities(set, at_omega, at_star, mv));
    report.degenerate_points = static_cast<int>(table.flagged.size());
    const Vec fit_measure = masked_measure(mv.mixed, table.flagged);
    const LinearFit fit = best_linear_fit(table.values, at_omega.features, fit_measure, radius);
    report.approx_error = fit.residual;

    report.rhs = report.term_stationarity + report.constant * report.approx_error;
    report.holds = report.lhs <= report.rhs + kHoldsSlack;
    return report;
}

BoundReport audit_rl_neural(const MetaRlTaskSet& set, const Vec& omega, const Vec& theta_star,
                                double radius_T) {
    if (radius_T <= 0.0) throw std::invalid_argument("audit: radius must be positive");
    const Vec* init = set.energy->init_params();
    if (init == nullptr)
        throw std::invalid_argument("audit_rl_neural: requires a neural energy model");
    const auto* neural = dynamic_cast<const NeuralEnergy*>(set.energy.get());

    const MetaRlEval at_omega = evaluate_meta_rl(set, omega);
    const MetaRlEval at_star = evaluate_meta_rl(set, theta_star);
    const MetaVisitationSet mv = meta_visitations(set, at_omega);

    BoundReport report;
    report.stationarity = "init_ball";
    report.radius = radius_T;
    report.lhs = at_star.objective - at_omega.objective;

    const Vec grad = meta_gradient_direct(set, at_omega);
    report.epsilon = grad.dot(*init - omega) + radius_T * grad.norm();
    report.term_stationarity = report.epsilon;
    report.c0 = concentrability(set, at_omega, mv);
    report.constant = constant_factor(set, report.c0);

    FunctionTable table = ratio_with_flags(f_omega_densities(set, at_omega, at_star, mv));
    report.degenerate_points = static_cast<int>(table.flagged.size());

    // inf over v with ||v - w_init|| <= R_T of || f_omega - phi_omega^T (v - omega) ||:
    // recenter the ball at zero by absorbing phi_omega^T (w_init - omega).
    const Vec shift = at_omega.features * (*init - omega);
    Vec target = table.values;
    for (int sa = 0; sa < target.size(); ++sa) target(sa) -= shift(sa);
    for (int sa : table.flagged) target(sa) = 0.0;
    const Vec fit_measure = masked_measure(mv.mixed, table.flagged);
    const LinearFit fit = best_linear_fit(target, at_omega.features, fit_measure, radius_T);
    report.approx_error = fit.residual;

    if (neural != nullptr) {
        const auto err = linearization_error(neural->net(), omega, neural->net().w_init, omega,
                                             neural->embeddings(), mv.mixed, radius_T);
        report.lin_proxy = std::sqrt(err.value);
        report.proxy_bound =
            std::pow(radius_T, 1.5) / std::pow(static_cast<double>(neural->net().width), 0.25);
    }

    report.rhs = report.term_stationarity + report.constant * report.approx_error;
    report.holds = report.lhs <= report.rhs + kHoldsSlack;
    return report;
}

}  // namespace metalab
