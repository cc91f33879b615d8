#include "metalab/meta_rl.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace metalab {

namespace {

Vec flatten(const Mat& by_state_action) {
    const int S = static_cast<int>(by_state_action.rows());
    const int A = static_cast<int>(by_state_action.cols());
    Vec flat(S * A);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) flat(s * A + a) = by_state_action(s, a);
    return flat;
}

}  // namespace

double MetaRlTaskSet::q_max() const {
    double q = 0.0;
    for (const auto& task : tasks) q = std::max(q, task.q_max);
    return q;
}

void MetaRlTaskSet::validate() const {
    if (tasks.empty()) throw std::invalid_argument("task set: no tasks");
    if (!energy) throw std::invalid_argument("task set: missing energy model");
    if (tau <= 0.0) throw std::invalid_argument("task set: temperature must be positive");
    if (eta < 0.0) throw std::invalid_argument("task set: eta must be nonnegative");
    const int S = energy->n_states(), A = energy->n_actions();
    for (const auto& task : tasks) {
        task.validate();
        if (task.n_states != S || task.n_actions != A)
            throw std::invalid_argument("task set: tasks must share the state-action space");
    }
}

MetaRlEval evaluate_meta_rl(const MetaRlTaskSet& set, const Vec& theta) {
    if (theta.size() != set.energy->dim())
        throw std::invalid_argument("meta-rl: parameter dimension mismatch");
    MetaRlEval eval;
    const Mat energy = set.energy->energy(theta);
    eval.pi_main = softmax_policy(energy, set.tau);
    eval.features = set.energy->features(theta);
    eval.tasks.reserve(set.tasks.size());
    double total = 0.0;
    for (const auto& mdp : set.tasks) {
        TaskEval te;
        te.main_values = value_functions(mdp, eval.pi_main);
        te.adapted = ppo_inner_step(energy, te.main_values.q, set.eta, set.tau);
        te.adapted_values = value_functions(mdp, te.adapted.probs);
        auto [nu, sigma] = visitation(mdp, te.adapted.probs);
        te.nu_adapted = std::move(nu);
        te.sigma_adapted = flatten(sigma);
        te.sigma_init_main = visitation_bundle(mdp, eval.pi_main).sigma_init;
        te.j_adapted = mdp.init_dist.dot(te.adapted_values.v);
        total += te.j_adapted;
        eval.tasks.push_back(std::move(te));
    }
    eval.objective = total / static_cast<double>(set.tasks.size());
    return eval;
}

double meta_objective(const MetaRlTaskSet& set, const Vec& theta) {
    return evaluate_meta_rl(set, theta).objective;
}

Vec meta_gradient_direct(const MetaRlTaskSet& set, const MetaRlEval& eval) {
    const int dim = set.energy->dim();
    Vec grad = Vec::Zero(dim);
    for (int i = 0; i < set.n_tasks(); ++i) {
        const TaskEval& te = eval.tasks[i];
        const double gamma = set.tasks[i].discount;
        const double horizon = 1.0 / (1.0 - gamma);
        const Vec adv_main = flatten(te.main_values.adv);
        const Vec adv_adapted = flatten(te.adapted_values.adv);

        // inner(sa, .) = E over sigma^{(s,a)} of phi(s',a') A^{pi_theta}(s',a')
        Mat inner = te.sigma_init_main * (eval.features.array().colwise() * adv_main.array()).matrix();
        Mat h = eval.features / set.tau + (set.eta * gamma / set.tau) * horizon * inner;
        grad += horizon * h.transpose() * (te.sigma_adapted.array() * adv_adapted.array()).matrix();
    }
    return grad / static_cast<double>(set.n_tasks());
}

Vec meta_gradient_direct(const MetaRlTaskSet& set, const Vec& theta) {
    return meta_gradient_direct(set, evaluate_meta_rl(set, theta));
}

Vec meta_gradient_refined(const MetaRlTaskSet& set, const MetaRlEval& eval) {
    const int dim = set.energy->dim();
    const int A = set.energy->n_actions();
    Vec grad = Vec::Zero(dim);
    for (int i = 0; i < set.n_tasks(); ++i) {
        const TaskEval& te = eval.tasks[i];
        const double gamma = set.tasks[i].discount;
        const double horizon = 1.0 / (1.0 - gamma);
        const Vec adv_main = flatten(te.main_values.adv);
        const Vec adv_adapted = flatten(te.adapted_values.adv);

        // Marginal and conditional-mean contractions of the joint measure
        // rho_i(s',a',s,a) = sigma^{(s,a)}(s',a') sigma_{pi_{i,theta}}(s,a).
        Vec varsigma = te.sigma_init_main.transpose() * te.sigma_adapted;
        Vec g_mass =
            te.sigma_init_main.transpose() * (te.sigma_adapted.array() * adv_adapted.array()).matrix();
        Vec g(varsigma.size());
        for (int sa = 0; sa < varsigma.size(); ++sa) {
            if (varsigma(sa) <= 0.0)
                throw std::runtime_error("meta-visitation measure for task " + std::to_string(i) +
                                         " has zero mass at (s=" + std::to_string(sa / A) +
                                         ", a=" + std::to_string(sa % A) + ")");
            const double cond_adv = g_mass(sa) / varsigma(sa);
            g(sa) = horizon * (adv_adapted(sa) * te.sigma_adapted(sa) / varsigma(sa) / set.tau +
                               (gamma * set.eta / set.tau) * horizon * cond_adv * adv_main(sa));
        }
        grad += eval.features.transpose() * (varsigma.array() * g.array()).matrix();
    }
    return grad / static_cast<double>(set.n_tasks());
}

Vec meta_gradient_refined(const MetaRlTaskSet& set, const Vec& theta) {
    return meta_gradient_refined(set, evaluate_meta_rl(set, theta));
}

MetaRlState run_meta_rl(const MetaRlTaskSet& set, const Vec& theta0,
                        const std::vector<double>& step_sizes, int iterations, double grad_tol) {
    if (iterations < 1) throw std::invalid_argument("run_meta_rl: iterations must be >= 1");
    if (step_sizes.empty()) throw std::invalid_argument("run_meta_rl: empty step-size schedule");
    if (step_sizes.size() != 1 && static_cast<int>(step_sizes.size()) < iterations)
        throw std::invalid_argument("run_meta_rl: schedule shorter than iteration count");
    for (double a : step_sizes)
        if (a <= 0.0) throw std::invalid_argument("run_meta_rl: step sizes must be positive");

    MetaRlState state;
    state.theta = theta0;
    MetaRlEval eval = evaluate_meta_rl(set, state.theta);
    Vec grad = meta_gradient_direct(set, eval);
    state.objective_history.push_back(eval.objective);
    state.grad_norm_history.push_back(grad.norm());

    for (int step = 0; step < iterations; ++step) {
        if (!grad.allFinite())
            throw std::runtime_error("run_meta_rl: non-finite gradient at iteration " +
                                     std::to_string(step));
        if (grad.norm() < grad_tol) break;
        const double alpha = step_sizes.size() == 1 ? step_sizes[0] : step_sizes[step];
        state.theta += alpha * grad;
        state.path_length += alpha * grad.norm();
        eval = evaluate_meta_rl(set, state.theta);
        grad = meta_gradient_direct(set, eval);
        state.objective_history.push_back(eval.objective);
        state.grad_norm_history.push_back(grad.norm());
        state.iteration = step + 1;
    }
    return state;
}

}  // namespace metalab
