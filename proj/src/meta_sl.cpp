#include "metalab/meta_sl.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <utility>

#include "metalab/trust_region.hpp"

namespace metalab {

namespace {
constexpr double kDegenerate = 1e-12;
constexpr double kHoldsSlack = 1e-9;
}  // namespace

LinearSlModel::LinearSlModel(Mat feature_table) : features_(std::move(feature_table)) {
    if (features_.rows() == 0 || features_.cols() == 0)
        throw std::invalid_argument("linear hypothesis model: empty feature table");
    if (!features_.allFinite())
        throw std::invalid_argument("linear hypothesis model: non-finite features");
}

NeuralSlModel::NeuralSlModel(TwoLayerNet net, Mat domain)
    : net_(std::move(net)), domain_(std::move(domain)) {
    if (domain_.cols() != net_.input_dim)
        throw std::invalid_argument("neural hypothesis model: domain dimension mismatch");
}

void SlTaskSet::validate() const {
    if (tasks.empty()) throw std::invalid_argument("sl task set: no tasks");
    if (!model) throw std::invalid_argument("sl task set: missing hypothesis model");
    if (model->domain_size() != domain_size())
        throw std::invalid_argument("sl task set: model/domain size mismatch");
    if (marginal.size() != domain.rows())
        throw std::invalid_argument("sl task set: marginal size mismatch");
    if (marginal.minCoeff() <= 0.0)
        throw std::invalid_argument("sl task set: marginal must be strictly positive");
    if (std::abs(marginal.sum() - 1.0) > 1e-12)
        throw std::invalid_argument("sl task set: marginal does not sum to 1");
    if (eta < 0.0) throw std::invalid_argument("sl task set: eta must be nonnegative");
    if (y_max <= 0.0) throw std::invalid_argument("sl task set: y_max must be positive");
    for (int x = 0; x < domain_size(); ++x)
        if (domain.row(x).norm() > 1.0 + 1e-9)
            throw std::invalid_argument("sl task set: domain point outside the unit ball");
    for (const auto& task : tasks) {
        if (static_cast<int>(task.labels.size()) != domain_size())
            throw std::invalid_argument("sl task set: one label set per domain point required");
        for (const auto& ls : task.labels) {
            if (ls.values.size() == 0 || ls.values.size() != ls.probs.size())
                throw std::invalid_argument("sl task set: malformed label set");
            if (ls.probs.minCoeff() < 0.0 || std::abs(ls.probs.sum() - 1.0) > 1e-12)
                throw std::invalid_argument("sl task set: label probabilities must form a distribution");
            if (ls.values.cwiseAbs().maxCoeff() > y_max + 1e-12)
                throw std::invalid_argument("sl task set: label value exceeds y_max");
        }
    }
}

SlHypothesis SlHypothesis::make(std::shared_ptr<const SlModel> model, Vec params) {
    SlHypothesis h;
    h.values = model->values(params);
    h.model = std::move(model);
    h.params = std::move(params);
    return h;
}

void SlHypothesis::validate() const {
    if (!model) throw std::invalid_argument("hypothesis: missing model");
    const Vec recomputed = model->values(params);
    if ((recomputed - values).cwiseAbs().maxCoeff() > 1e-12)
        throw std::invalid_argument("hypothesis: cached values inconsistent with parameters");
}

double risk(const SlTaskSet& set, int task, const Vec& h_values) {
    const SlTask& t = set.tasks.at(task);
    double total = 0.0;
    for (int x = 0; x < set.domain_size(); ++x) {
        const SlLabelSet& ls = t.labels[x];
        double inner = 0.0;
        for (int k = 0; k < ls.values.size(); ++k) {
            const double diff = h_values(x) - ls.values(k);
            inner += ls.probs(k) * diff * diff;
        }
        total += set.marginal(x) * inner;
    }
    return total;
}

Vec frechet_derivative_sq(const SlTaskSet& set, int task, const Vec& h_values) {
    return 2.0 * (h_values - set.tasks.at(task).cond_mean);
}

Vec risk_gradient(const SlTaskSet& set, int task, const Vec& theta) {
    const Vec h = set.model->values(theta);
    const Vec delta = frechet_derivative_sq(set, task, h);
    return set.model->features(theta).transpose() *
           (set.marginal.array() * delta.array()).matrix();
}

Vec inner_gd_step(const SlTaskSet& set, int task, const Vec& theta) {
    return theta - set.eta * risk_gradient(set, task, theta);
}

double meta_objective_sl(const SlTaskSet& set, const Vec& theta) {
    double total = 0.0;
    for (int i = 0; i < set.n_tasks(); ++i)
        total += risk(set, i, set.model->values(inner_gd_step(set, i, theta)));
    return total / static_cast<double>(set.n_tasks());
}

namespace {

// K_{theta,eta} v = v - 2 eta Phi_theta^T diag(rho) Phi_theta v, matrix-free.
Vec apply_kernel(const SlTaskSet& set, const Mat& phi_theta, const Vec& v, double eta) {
    return v - 2.0 * eta * (phi_theta.transpose() *
                            (set.marginal.array() * (phi_theta * v).array()).matrix());
}

}  // namespace

Mat sl_kernel_matrix(const SlTaskSet& set, const Vec& params) {
    const Mat phi = set.model->features(params);
    const int dim = set.model->dim();
    return Mat::Identity(dim, dim) -
           2.0 * set.eta * phi.transpose() *
               (phi.array().colwise() * set.marginal.array()).matrix();
}

Vec meta_gradient_sl(const SlTaskSet& set, const Vec& theta) {
    const Mat phi_theta = set.model->features(theta);
    Vec grad = Vec::Zero(set.model->dim());
    for (int i = 0; i < set.n_tasks(); ++i) {
        const Vec theta_i = inner_gd_step(set, i, theta);
        const Vec h_i = set.model->values(theta_i);
        const Vec delta = frechet_derivative_sq(set, i, h_i);
        const Vec raw = set.model->features(theta_i).transpose() *
                        (set.marginal.array() * delta.array()).matrix();
        grad += apply_kernel(set, phi_theta, raw, set.eta);
    }
    return grad / static_cast<double>(set.n_tasks());
}

SlRunState run_meta_sl(const SlTaskSet& set, const Vec& theta0,
                       const std::vector<double>& step_sizes, int iterations, double grad_tol) {
    if (iterations < 1) throw std::invalid_argument("run_meta_sl: iterations must be >= 1");
    if (step_sizes.empty()) throw std::invalid_argument("run_meta_sl: empty step-size schedule");
    if (step_sizes.size() != 1 && static_cast<int>(step_sizes.size()) < iterations)
        throw std::invalid_argument("run_meta_sl: schedule shorter than iteration count");
    for (double a : step_sizes)
        if (a <= 0.0) throw std::invalid_argument("run_meta_sl: step sizes must be positive");

    SlRunState state;
    state.theta = theta0;
    Vec grad = meta_gradient_sl(set, state.theta);
    state.objective_history.push_back(meta_objective_sl(set, state.theta));
    state.grad_norm_history.push_back(grad.norm());

    for (int step = 0; step < iterations; ++step) {
        if (!grad.allFinite())
            throw std::runtime_error("run_meta_sl: non-finite gradient at iteration " +
                                     std::to_string(step));
        if (grad.norm() < grad_tol) break;
        const double alpha = step_sizes.size() == 1 ? step_sizes[0] : step_sizes[step];
        state.theta -= alpha * grad;
        state.path_length += alpha * grad.norm();
        grad = meta_gradient_sl(set, state.theta);
        state.objective_history.push_back(meta_objective_sl(set, state.theta));
        state.grad_norm_history.push_back(grad.norm());
        state.iteration = step + 1;
    }
    return state;
}

namespace {

struct AdaptedPair {
    std::vector<Vec> omega_values;  // h_{omega_i} per task
    std::vector<Vec> star_values;   // h_{theta*_i} per task
    std::vector<Vec> frechet;       // delta R_i / delta h at h_{omega_i}
    double lhs = 0.0;               // L(omega) - L(theta*)
};

AdaptedPair adapt_both(const SlTaskSet& set, const Vec& omega, const Vec& theta_star) {
    AdaptedPair out;
    double risk_omega = 0.0, risk_star = 0.0;
    for (int i = 0; i < set.n_tasks(); ++i) {
        Vec h_omega = set.model->values(inner_gd_step(set, i, omega));
        Vec h_star = set.model->values(inner_gd_step(set, i, theta_star));
        risk_omega += risk(set, i, h_omega);
        risk_star += risk(set, i, h_star);
        out.frechet.push_back(frechet_derivative_sq(set, i, h_omega));
        out.omega_values.push_back(std::move(h_omega));
        out.star_values.push_back(std::move(h_star));
    }
    out.lhs = (risk_omega - risk_star) / static_cast<double>(set.n_tasks());
    return out;
}

double average_root_risk(const SlTaskSet& set, const AdaptedPair& pair) {
    double total = 0.0;
    for (int i = 0; i < set.n_tasks(); ++i) total += std::sqrt(risk(set, i, pair.omega_values[i]));
    return total / static_cast<double>(set.n_tasks());
}

/// nu(x') = (1/n) sum_i delta_i(x') (h_{omega_i}(x') - h_{theta*_i}(x')).
Vec gap_numerator(const SlTaskSet& set, const AdaptedPair& pair) {
    Vec nu = Vec::Zero(set.domain_size());
    for (int i = 0; i < set.n_tasks(); ++i)
        nu += (pair.frechet[i].array() * (pair.omega_values[i] - pair.star_values[i]).array())
                  .matrix();
    return nu / static_cast<double>(set.n_tasks());
}

}  // namespace

SlBoundReport audit_sl_general(const SlTaskSet& set, const Vec& omega, const Vec& theta_star,
                                double radius) {
    const AdaptedPair pair = adapt_both(set, omega, theta_star);
    const Mat phi = set.model->features(omega);
    auto squared_loss_hessian = [&phi](int x_idx, double) -> Mat {
        return 2.0 * phi.row(x_idx).transpose() * phi.row(x_idx);
    };
    return audit_sl_general(set, omega, theta_star, radius, pair.frechet, squared_loss_hessian);
}

SlBoundReport audit_sl_general(const SlTaskSet& set, const Vec& omega, const Vec& theta_star,
                                double radius, const std::vector<Vec>& frechet_tables,
                                const std::function<Mat(int, double)>& loss_hessian) {
    if (radius <= 0.0) throw std::invalid_argument("audit: radius must be positive");
    const int n = set.n_tasks(), nx = set.domain_size();
    const int dim = set.model->dim();
    const AdaptedPair pair = adapt_both(set, omega, theta_star);
    const Mat phi = set.model->features(omega);

    SlBoundReport report;
    report.stationarity = "unit_ball";
    report.radius = radius;
    report.lhs = pair.lhs;
    report.epsilon = meta_gradient_sl(set, omega).norm();
    report.term_i = radius * report.epsilon;

    // Mixed-conditional support at each x: group label values across tasks.
    const Vec nu = gap_numerator(set, pair);
    double w_norm_sq = 0.0;
    std::vector<Vec> targets;      // u rows per (x, y) pair over x'
    std::vector<Mat> designs;      // bent features per (x, y) pair, nx x dim
    std::vector<Vec> weights;      // M(x,y) rho(x') per pair
    int degenerate = 0;
    for (int x = 0; x < nx; ++x) {
        std::map<double, Vec> support;  // y -> per-task conditional probabilities
        for (int i = 0; i < n; ++i) {
            const SlLabelSet& ls = set.tasks[i].labels[x];
            for (int k = 0; k < ls.values.size(); ++k) {
                auto [it, inserted] = support.try_emplace(ls.values(k), Vec::Zero(n));
                it->second(i) += ls.probs(k);
            }
        }
        for (const auto& [y, probs] : support) {
            const double mixed_prob = probs.sum() / n;
            if (mixed_prob <= 0.0) continue;
            const double mass = set.marginal(x) * mixed_prob;  // M(x, y)
            const Mat bend = Mat::Identity(dim, dim) - set.eta * loss_hessian(x, y);
            Mat design = phi * bend.transpose();  // rows (bend phi(x'))^T
            Vec w_row(nx), u_row = Vec::Zero(nx), weight_row(nx);
            for (int xp = 0; xp < nx; ++xp) {
                double w = 0.0;
                for (int i = 0; i < n; ++i) w += frechet_tables[i](xp) * probs(i) / mixed_prob;
                w /= n;
                w_row(xp) = w;
                weight_row(xp) = mass * set.marginal(xp);
                w_norm_sq += weight_row(xp) * w * w;
                if (std::abs(w) < kDegenerate) {
                    ++degenerate;
                    weight_row(xp) = 0.0;
                } else {
                    u_row(xp) = nu(xp) / w;
                }
            }
            targets.push_back(std::move(u_row));
            designs.push_back(std::move(design));
            weights.push_back(std::move(weight_row));
        }
    }

    const int pairs = static_cast<int>(targets.size());
    Vec target(pairs * nx), weight(pairs * nx);
    Mat design(pairs * nx, dim);
    for (int p = 0; p < pairs; ++p) {
        target.segment(p * nx, nx) = targets[p];
        weight.segment(p * nx, nx) = weights[p];
        design.middleRows(p * nx, nx) = designs[p];
    }
    const LinearFit fit = best_linear_fit(target, design, weight, radius);

    report.term_ii = std::sqrt(w_norm_sq);
    report.term_iii = fit.residual;
    report.degenerate_points = degenerate;
    report.rhs = report.term_i + report.term_ii * report.term_iii;
    report.holds = report.lhs <= report.rhs + kHoldsSlack;
    return report;
}

SlBoundReport audit_sl_kernel(const SlTaskSet& set, const Vec& omega, const Vec& theta_star,
                                  double radius) {
    if (radius <= 0.0) throw std::invalid_argument("audit: radius must be positive");
    const AdaptedPair pair = adapt_both(set, omega, theta_star);
    const Mat phi = set.model->features(omega);

    SlBoundReport report;
    report.stationarity = "unit_ball";
    report.radius = radius;
    report.lhs = pair.lhs;
    report.epsilon = meta_gradient_sl(set, omega).norm();
    report.term_i = radius * report.epsilon;
    report.term_ii = 2.0 * average_root_risk(set, pair);

    Vec w = Vec::Zero(set.domain_size());
    for (int i = 0; i < set.n_tasks(); ++i) w += pair.frechet[i];
    w /= static_cast<double>(set.n_tasks());
    const Vec nu = gap_numerator(set, pair);

    Vec target = Vec::Zero(set.domain_size());
    Vec weight = set.marginal;
    for (int x = 0; x < set.domain_size(); ++x) {
        if (std::abs(w(x)) < kDegenerate) {
            ++report.degenerate_points;
            weight(x) = 0.0;
        } else {
            target(x) = nu(x) / w(x);
        }
    }

    // Averaged-kernel features (K_eta phi(x'))^T as rows.
    const Mat design = phi * sl_kernel_matrix(set, omega);
    const LinearFit fit = best_linear_fit(target, design, weight, radius);
    report.term_iii = fit.residual;
    report.rhs = report.term_i + report.term_ii * report.term_iii;
    report.holds = report.lhs <= report.rhs + kHoldsSlack;
    return report;
}

SlBoundReport audit_sl_neural(const SlTaskSet& set, const Vec& omega, const Vec& theta_star,
                                  double radius_T) {
    if (radius_T <= 0.0) throw std::invalid_argument("audit: radius must be positive");
    const Vec* init = set.model->init_params();
    if (init == nullptr)
        throw std::invalid_argument("audit_sl_neural: requires a neural hypothesis model");
    const auto* neural = dynamic_cast<const NeuralSlModel*>(set.model.get());

    const AdaptedPair pair = adapt_both(set, omega, theta_star);

    SlBoundReport report;
    report.stationarity = "init_ball";
    report.radius = radius_T;
    report.lhs = pair.lhs;
    const Vec grad = meta_gradient_sl(set, omega);
    report.epsilon = grad.dot(omega - *init) + radius_T * grad.norm();
    report.term_i = report.epsilon;
    report.term_ii = 2.0 * average_root_risk(set, pair);

    Vec w = Vec::Zero(set.domain_size());
    for (int i = 0; i < set.n_tasks(); ++i) w += pair.frechet[i];
    w /= static_cast<double>(set.n_tasks());
    const Vec nu = gap_numerator(set, pair);

    // Target: u_bar = f(.; w_init) + nu / w over the non-degenerate support.
    Vec u_bar = set.model->values(*init);
    Vec weight = set.marginal;
    for (int x = 0; x < set.domain_size(); ++x) {
        if (std::abs(w(x)) < kDegenerate) {
            ++report.degenerate_points;
            weight(x) = 0.0;
        } else {
            u_bar(x) += nu(x) / w(x);
        }
    }

    // Mapped ball center c0 = w_init + K_{omega,eta} (omega - w_init); the fit
    // runs over the image of the initialization ball under the kernel map,
    // linearized at c0.
    const Mat phi_omega = set.model->features(omega);
    const Vec center = *init + apply_kernel(set, phi_omega, omega - *init, set.eta);
    const Mat phi_center = set.model->features(center);
    const Mat cross = phi_center * phi_omega.transpose();  // |X| x |X|
    const Mat design =
        phi_center -
        2.0 * set.eta * cross * (phi_omega.array().colwise() * set.marginal.array()).matrix();

    Vec target = u_bar - set.model->values(center);
    for (int x = 0; x < set.domain_size(); ++x)
        if (weight(x) == 0.0) target(x) = 0.0;
    const LinearFit fit = best_linear_fit(target, design, weight, radius_T);
    report.term_iii = fit.residual;

    const double g_t = (1.0 + set.eta) * radius_T + set.eta * set.y_max;
    if (neural != nullptr) {
        report.proxy_bound =
            std::pow(g_t, 1.5) / std::pow(static_cast<double>(neural->net().width), 0.25);
        const auto err =
            linearization_error(neural->net(), center, neural->net().w_init, center,
                                neural->domain(), set.marginal, (2.0 + 4.0 * set.eta) * radius_T);
        report.lin_proxy = std::sqrt(err.value);
    }

    report.rhs = report.term_i + report.term_ii * report.term_iii;
    report.holds = report.lhs <= report.rhs + kHoldsSlack;
    return report;
}

}  // namespace metalab
