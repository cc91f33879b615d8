#include "metalab/tabular_mdp.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace metalab {

namespace {
constexpr double kInputTol = 1e-12;

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}
}  // namespace

void TabularMdp::validate() const {
    require(n_states > 0 && n_actions > 0, "mdp: dimensions must be positive");
    require(transition.rows() == n_states * n_actions && transition.cols() == n_states,
            "mdp: transition shape mismatch");
    require(reward.rows() == n_states && reward.cols() == n_actions, "mdp: reward shape mismatch");
    require(init_dist.size() == n_states, "mdp: init_dist size mismatch");
    require(discount > 0.0 && discount < 1.0, "mdp: discount must lie in (0,1)");
    require(q_max > 0.0, "mdp: q_max must be positive");
    for (int row = 0; row < transition.rows(); ++row) {
        require(transition.row(row).minCoeff() >= 0.0,
                "mdp: negative transition probability in row " + std::to_string(row));
        require(std::abs(transition.row(row).sum() - 1.0) <= kInputTol,
                "mdp: transition row " + std::to_string(row) + " does not sum to 1");
    }
    require(init_dist.minCoeff() > 0.0, "mdp: init_dist must be strictly positive");
    require(std::abs(init_dist.sum() - 1.0) <= kInputTol, "mdp: init_dist does not sum to 1");
    require(reward.cwiseAbs().maxCoeff() <= q_max + kInputTol,
            "mdp: reward exceeds declared q_max bound");
    require(transition.allFinite() && reward.allFinite(), "mdp: non-finite entries");
}

void PolicyTable::validate() const {
    require(probs.rows() > 0 && probs.cols() > 0, "policy: empty table");
    for (int s = 0; s < probs.rows(); ++s) {
        require(probs.row(s).minCoeff() > 0.0,
                "policy: zero or negative probability at state " + std::to_string(s));
        require(std::abs(probs.row(s).sum() - 1.0) <= kInputTol,
                "policy: row " + std::to_string(s) + " does not sum to 1");
    }
}

Mat policy_transition(const TabularMdp& mdp, const PolicyTable& policy) {
    const int S = mdp.n_states, A = mdp.n_actions;
    Mat p = Mat::Zero(S, S);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a)
            p.row(s) += policy.probs(s, a) * mdp.transition.row(mdp.sa(s, a));
    return p;
}

Vec policy_reward(const TabularMdp& mdp, const PolicyTable& policy) {
    return (mdp.reward.array() * policy.probs.array()).rowwise().sum().matrix();
}

namespace {
void check_dims(const TabularMdp& mdp, const PolicyTable& policy) {
    if (policy.probs.rows() != mdp.n_states || policy.probs.cols() != mdp.n_actions)
        throw std::invalid_argument("policy/mdp dimension mismatch");
}
}  // namespace

ValueBundle value_functions(const TabularMdp& mdp, const PolicyTable& policy) {
    check_dims(mdp, policy);
    const int S = mdp.n_states, A = mdp.n_actions;
    const double g = mdp.discount;
    const Mat p_pi = policy_transition(mdp, policy);
    const Vec r_pi = policy_reward(mdp, policy);

    Eigen::PartialPivLU<Mat> lu(Mat::Identity(S, S) - g * p_pi);
    ValueBundle out;
    out.v = lu.solve((1.0 - g) * r_pi);
    if (!out.v.allFinite()) throw std::logic_error("value solve produced non-finite values");

    out.q.resize(S, A);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a)
            out.q(s, a) = (1.0 - g) * mdp.reward(s, a) + g * mdp.transition.row(mdp.sa(s, a)).dot(out.v);
    out.adv = out.q.colwise() - out.v;
    return out;
}

std::pair<Vec, Mat> visitation(const TabularMdp& mdp, const PolicyTable& policy) {
    check_dims(mdp, policy);
    const int S = mdp.n_states;
    const double g = mdp.discount;
    const Mat p_pi = policy_transition(mdp, policy);

    Eigen::PartialPivLU<Mat> lu(Mat::Identity(S, S) - g * p_pi.transpose());
    Vec nu = lu.solve((1.0 - g) * mdp.init_dist);
    Mat sigma = policy.probs.array().colwise() * nu.array();
    return {std::move(nu), std::move(sigma)};
}

Mat init_visitation(const TabularMdp& mdp, const PolicyTable& policy, int s, int a) {
    check_dims(mdp, policy);
    if (s < 0 || s >= mdp.n_states || a < 0 || a >= mdp.n_actions)
        throw std::invalid_argument("init_visitation: state-action index out of range");
    const int S = mdp.n_states;
    const double g = mdp.discount;
    const Mat p_pi = policy_transition(mdp, policy);

    Eigen::PartialPivLU<Mat> lu(Mat::Identity(S, S) - g * p_pi.transpose());
    Vec nu = lu.solve((1.0 - g) * mdp.transition.row(mdp.sa(s, a)).transpose());
    return policy.probs.array().colwise() * nu.array();
}

VisitationBundle visitation_bundle(const TabularMdp& mdp, const PolicyTable& policy) {
    check_dims(mdp, policy);
    const int S = mdp.n_states, A = mdp.n_actions;
    const double g = mdp.discount;
    const Mat p_pi = policy_transition(mdp, policy);

    // One factorization serves the zeta-initialized solve and all S*A
    // re-initialized solves.
    Eigen::PartialPivLU<Mat> lu(Mat::Identity(S, S) - g * p_pi.transpose());

    VisitationBundle out;
    out.nu = lu.solve((1.0 - g) * mdp.init_dist);
    out.sigma = policy.probs.array().colwise() * out.nu.array();

    Mat nu_init = lu.solve((1.0 - g) * mdp.transition.transpose());  // S x (S*A)
    out.sigma_init.resize(S * A, S * A);
    for (int row = 0; row < S * A; ++row)
        for (int sp = 0; sp < S; ++sp)
            for (int ap = 0; ap < A; ++ap)
                out.sigma_init(row, sp * A + ap) = policy.probs(sp, ap) * nu_init(sp, row);
    return out;
}

double expected_total_reward(const TabularMdp& mdp, const PolicyTable& policy) {
    auto [nu, sigma] = visitation(mdp, policy);
    (void)nu;
    return (sigma.array() * mdp.reward.array()).sum();
}

}  // namespace metalab
