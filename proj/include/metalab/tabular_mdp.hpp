#pragma once

#include <Eigen/Dense>
#include <utility>

namespace metalab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Finite MDP with discounted-normalized value conventions.
///
/// Value functions, visitation measures and the expected total reward all
/// carry the (1 - gamma) normalization factor, so V and Q stay bounded by
/// the reward bound q_max and every visitation measure is a probability
/// distribution. All solves are exact dense LU factorizations; the systems
/// (I - gamma * P_pi) are nonsingular for gamma < 1.
struct TabularMdp {
    int n_states = 0;
    int n_actions = 0;
    Mat transition;   // (S*A) x S, row sa(s,a) is P(. | s, a)
    Mat reward;       // S x A
    double discount = 0.0;
    Vec init_dist;    // S, strictly positive
    double q_max = 1.0;

    int sa(int s, int a) const { return s * n_actions + a; }

    /// Throws std::invalid_argument on malformed instances: transition rows
    /// and init_dist must be distributions within 1e-12, init_dist strictly
    /// positive, rewards within [-q_max, q_max].
    void validate() const;
};

/// Row-stochastic action-probability table, one row per state.
struct PolicyTable {
    Mat probs;  // S x A, rows sum to 1, entries > 0

    void validate() const;
};

/// V, Q and advantage for one (mdp, policy) pair.
struct ValueBundle {
    Vec v;    // S
    Mat q;    // S x A
    Mat adv;  // S x A, adv = q - v broadcast over actions
};

/// Exact visitation measures for one (mdp, policy) pair. sigma_init stores,
/// in row sa(s,a), the state-action visitation measure whose initial state is
/// drawn from P(. | s, a) and whose actions follow the policy throughout.
struct VisitationBundle {
    Vec nu;          // S
    Mat sigma;       // S x A
    Mat sigma_init;  // (S*A) x (S*A)
};

/// Policy-averaged transition matrix P_pi, shape S x S.
Mat policy_transition(const TabularMdp& mdp, const PolicyTable& policy);

/// Policy-averaged reward vector r_pi, shape S.
Vec policy_reward(const TabularMdp& mdp, const PolicyTable& policy);

/// Solves (I - gamma P_pi) V = (1 - gamma) r_pi, then
/// Q(s,a) = (1 - gamma) r(s,a) + gamma sum_s' P(s'|s,a) V(s') and A = Q - V.
ValueBundle value_functions(const TabularMdp& mdp, const PolicyTable& policy);

/// State and state-action visitation measures: nu solves
/// nu = (1 - gamma) zeta + gamma P_pi^T nu, sigma(s,a) = pi(a|s) nu(s).
std::pair<Vec, Mat> visitation(const TabularMdp& mdp, const PolicyTable& policy);

/// Visitation measure re-initialized at (s, a): the same linear system with
/// P(. | s, a) in place of the initial distribution.
Mat init_visitation(const TabularMdp& mdp, const PolicyTable& policy, int s, int a);

/// nu, sigma and all S*A re-initialized measures with a single factorization.
VisitationBundle visitation_bundle(const TabularMdp& mdp, const PolicyTable& policy);

/// J(pi) = sum_{s,a} sigma_pi(s,a) r(s,a); equals sum_s zeta(s) V(s).
double expected_total_reward(const TabularMdp& mdp, const PolicyTable& policy);

}  // namespace metalab
