#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "metalab/neural_net.hpp"
#include "metalab/tabular_mdp.hpp"

namespace metalab {

/// Hypothesis parameterization over a fixed finite domain. values(params) is
/// the hypothesis table h(x) and features(params) its parameter gradient per
/// domain point (constant for linear models, the almost-everywhere gradient
/// for neural ones).
class SlModel {
public:
    virtual ~SlModel() = default;
    virtual int dim() const = 0;
    virtual int domain_size() const = 0;
    virtual Vec values(const Vec& params) const = 0;    // |X|
    virtual Mat features(const Vec& params) const = 0;  // |X| x dim
    virtual const Vec* init_params() const { return nullptr; }
};

class LinearSlModel final : public SlModel {
public:
    explicit LinearSlModel(Mat feature_table);

    int dim() const override { return static_cast<int>(features_.cols()); }
    int domain_size() const override { return static_cast<int>(features_.rows()); }
    Vec values(const Vec& params) const override { return features_ * params; }
    Mat features(const Vec&) const override { return features_; }
    const Mat& feature_table() const { return features_; }

private:
    Mat features_;
};

class NeuralSlModel final : public SlModel {
public:
    NeuralSlModel(TwoLayerNet net, Mat domain);

    int dim() const override { return net_.param_dim(); }
    int domain_size() const override { return static_cast<int>(domain_.rows()); }
    Vec values(const Vec& params) const override { return nn_forward(net_, params, domain_); }
    Mat features(const Vec& params) const override { return nn_features(net_, params, domain_); }
    const Vec* init_params() const override { return &net_.w_init; }
    const TwoLayerNet& net() const { return net_; }
    const Mat& domain() const { return domain_; }

private:
    TwoLayerNet net_;
    Mat domain_;
};

/// Finite conditional label distribution at one domain point.
struct SlLabelSet {
    Vec values;
    Vec probs;
};

struct SlTask {
    std::vector<SlLabelSet> labels;  // one per domain point
    Vec cond_mean;                   // cached E[y | x]
};

/// Finite-domain supervised subtasks with a shared strictly positive marginal
/// and squared loss.
struct SlTaskSet {
    Mat domain;    // |X| x p, rows in the unit ball
    Vec marginal;  // |X|
    std::vector<SlTask> tasks;
    std::shared_ptr<const SlModel> model;
    double eta = 0.1;
    double y_max = 1.0;

    int n_tasks() const { return static_cast<int>(tasks.size()); }
    int domain_size() const { return static_cast<int>(domain.rows()); }
    void validate() const;
};

/// Hypothesis with its cached value table.
struct SlHypothesis {
    std::shared_ptr<const SlModel> model;
    Vec params;
    Vec values;

    static SlHypothesis make(std::shared_ptr<const SlModel> model, Vec params);
    /// Checks the cache against a recompute within 1e-12.
    void validate() const;
};

/// Exact risk sum_x rho(x) sum_y p(y|x) (h(x) - y)^2.
double risk(const SlTaskSet& set, int task, const Vec& h_values);

/// Squared-loss functional derivative table 2 (h(x') - E[y | x']).
Vec frechet_derivative_sq(const SlTaskSet& set, int task, const Vec& h_values);

/// Exact parameter gradient of the risk at theta.
Vec risk_gradient(const SlTaskSet& set, int task, const Vec& theta);

/// One gradient-descent step theta - eta grad R_i(h_theta).
Vec inner_gd_step(const SlTaskSet& set, int task, const Vec& theta);

double meta_objective_sl(const SlTaskSet& set, const Vec& theta);
Vec meta_gradient_sl(const SlTaskSet& set, const Vec& theta);

/// Dense averaged adaptation kernel I - 2 eta E_rho[phi phi^T] with the
/// features taken at the given parameters; symmetric, the identity at eta = 0.
Mat sl_kernel_matrix(const SlTaskSet& set, const Vec& params);

struct SlRunState {
    Vec theta;
    int iteration = 0;
    std::vector<double> objective_history;
    std::vector<double> grad_norm_history;
    double path_length = 0.0;

    double epsilon() const { return grad_norm_history.back(); }
    double objective() const { return objective_history.back(); }
};

SlRunState run_meta_sl(const SlTaskSet& set, const Vec& theta0,
                       const std::vector<double>& step_sizes, int iterations,
                       double grad_tol = 1e-8);

struct SlBoundReport {
    double lhs = 0.0;       // L(omega) - L(theta*)
    double term_i = 0.0;    // radius * epsilon or epsilon
    double term_ii = 0.0;   // ||w|| or 2 * average root risk
    double term_iii = 0.0;  // constrained fit residual
    double rhs = 0.0;
    bool holds = false;
    double epsilon = 0.0;
    double radius = 0.0;
    int degenerate_points = 0;
    double lin_proxy = 0.0;    // measured, neural audit only
    double proxy_bound = 0.0;  // scaling-law value, neural audit only
    std::string stationarity;  // "unit_ball" or "init_ball"
};

/// General-form audit: the triple-indexed density w, target u and loss-bent
/// features over (x, y, x'), all under the mixed task distribution times the
/// marginal. The default overload instantiates the squared loss; the general
/// overload accepts per-task functional-derivative tables at the adapted
/// hypotheses and the loss Hessian per (x, y).
SlBoundReport audit_sl_general(const SlTaskSet& set, const Vec& omega, const Vec& theta_star,
                                double radius);
SlBoundReport audit_sl_general(const SlTaskSet& set, const Vec& omega, const Vec& theta_star,
                                double radius, const std::vector<Vec>& frechet_tables,
                                const std::function<Mat(int, double)>& loss_hessian);

/// Squared-loss specialization over the domain only, with the averaged-kernel
/// features and the root-risk multiplier.
SlBoundReport audit_sl_kernel(const SlTaskSet& set, const Vec& omega, const Vec& theta_star,
                                  double radius);

/// Neural variant with the kernel-mapped initialization ball; the infimum is
/// fitted in the feature map frozen at the mapped ball center (first-order
/// surrogate).
SlBoundReport audit_sl_neural(const SlTaskSet& set, const Vec& omega, const Vec& theta_star,
                                  double radius_T);

}  // namespace metalab
