#pragma once

#include <memory>
#include <vector>

#include "metalab/policy.hpp"
#include "metalab/tabular_mdp.hpp"

namespace metalab {

/// A sampled family of subtask MDPs sharing the state-action space and the
/// energy parameterization of the main-effect policy.
struct MetaRlTaskSet {
    std::vector<TabularMdp> tasks;
    std::shared_ptr<const EnergyModel> energy;
    double tau = 1.0;
    double eta = 0.1;

    int n_tasks() const { return static_cast<int>(tasks.size()); }
    double q_max() const;
    void validate() const;
};

/// Everything the gradient forms and the auditors need for one task at a
/// given main-effect parameter: the main-effect value functions, the adapted
/// policy with its value functions and visitation measures, and the
/// re-initialized visitation measures of the main effect.
struct TaskEval {
    ValueBundle main_values;    // of pi_theta on this task
    AdaptedPolicy adapted;      // pi_{i,theta}
    ValueBundle adapted_values; // of pi_{i,theta}
    Vec nu_adapted;             // S
    Vec sigma_adapted;          // S*A, flattened
    Mat sigma_init_main;        // (S*A) x (S*A), row (s,a)
    double j_adapted = 0.0;     // J_i(pi_{i,theta})
};

struct MetaRlEval {
    PolicyTable pi_main;
    Mat features;  // (S*A) x dim, evaluated at theta
    std::vector<TaskEval> tasks;
    double objective = 0.0;
};

MetaRlEval evaluate_meta_rl(const MetaRlTaskSet& set, const Vec& theta);

/// Average post-adaptation expected total reward over the subtasks.
double meta_objective(const MetaRlTaskSet& set, const Vec& theta);

/// Exact meta-gradient in visitation-measure form. With the normalized value
/// conventions the per-task contribution carries a 1/(1-gamma_i) factor, and
/// the adaptation term one more; both are required for the gradient to match
/// finite differences of the objective.
Vec meta_gradient_direct(const MetaRlTaskSet& set, const MetaRlEval& eval);
Vec meta_gradient_direct(const MetaRlTaskSet& set, const Vec& theta);

/// The same gradient regrouped over the meta-visitation measure of each task;
/// algebraically identical to the direct form. Throws if a meta-visitation
/// entry has zero mass (cannot happen for mixed transition kernels).
Vec meta_gradient_refined(const MetaRlTaskSet& set, const MetaRlEval& eval);
Vec meta_gradient_refined(const MetaRlTaskSet& set, const Vec& theta);

struct MetaRlState {
    Vec theta;
    int iteration = 0;
    std::vector<double> objective_history;   // length iteration + 1
    std::vector<double> grad_norm_history;   // length iteration + 1
    double path_length = 0.0;                // sum of step norms

    double epsilon() const { return grad_norm_history.back(); }
    double objective() const { return objective_history.back(); }
};

/// Gradient ascent on the meta-objective. step_sizes may hold a single value
/// (constant schedule) or one value per iteration. Stops early once the
/// gradient norm falls below grad_tol; aborts on non-finite gradients.
MetaRlState run_meta_rl(const MetaRlTaskSet& set, const Vec& theta0,
                        const std::vector<double>& step_sizes, int iterations,
                        double grad_tol = 1e-8);

}  // namespace metalab
