#pragma once

#include <string>
#include <vector>

#include "metalab/meta_rl.hpp"
#include "metalab/trust_region.hpp"

namespace metalab {

/// Joint, marginal and mixed visitation measures of the main effect
/// re-initialized from the adapted policies' occupancy. joint[i](sa', sa) is
/// the probability of the pair ((s',a'), (s,a)) under task i.
struct MetaVisitationSet {
    std::vector<Mat> joint;     // per task, (S*A) x (S*A)
    std::vector<Vec> marginal;  // per task, S*A
    Vec mixed;                  // S*A, strictly positive
};

MetaVisitationSet meta_visitations(const MetaRlTaskSet& set, const MetaRlEval& eval);
MetaVisitationSet meta_visitations(const MetaRlTaskSet& set, const Vec& theta);

/// Smallest constant bounding the L2(mixed) norms of the density ratios of
/// the adapted-policy occupancies and the per-task meta-visitation measures
/// against the mixed measure. Always >= 1.
double concentrability(const MetaRlTaskSet& set, const MetaRlEval& eval);
double concentrability(const MetaRlTaskSet& set, const MetaRlEval& eval,
                       const MetaVisitationSet& mv);
double concentrability(const MetaRlTaskSet& set, const Vec& theta);

/// A function table over flattened (s,a) with entries whose defining ratio
/// degenerated flagged and zeroed.
struct FunctionTable {
    Vec values;
    std::vector<int> flagged;

    bool fully_degenerate() const {
        return static_cast<int>(flagged.size()) == static_cast<int>(values.size());
    }
};

/// The optimality-gap target function: the ratio of the per-task
/// performance-difference density over the gradient density, both expressed
/// against the mixed meta-visitation measure at omega. Entries where the
/// denominator falls below 1e-12 in absolute value are flagged.
FunctionTable f_omega(const MetaRlTaskSet& set, const Vec& omega, const Vec& theta_star);

struct BoundReport {
    double lhs = 0.0;                // L(theta*) - L(omega)
    double term_stationarity = 0.0;  // radius * epsilon (unit-ball form) or epsilon
    double constant = 0.0;           // concentrability constant factor
    double approx_error = 0.0;       // constrained fit residual
    double rhs = 0.0;
    bool holds = false;
    double c0 = 0.0;
    double epsilon = 0.0;
    double radius = 0.0;
    int degenerate_points = 0;
    double lin_proxy = 0.0;          // measured linearization error, neural audits only
    double proxy_bound = 0.0;        // scaling-law value, neural audits only
    std::string stationarity;        // "unit_ball" or "init_ball"
};

/// Optimality-gap certificate for the linear parameterization. epsilon is the
/// gradient norm at omega (the exact supremum of the gradient pairing over
/// the unit ball); theta_star is the caller's best-found optimum.
BoundReport audit_rl_linear(const MetaRlTaskSet& set, const Vec& omega, const Vec& theta_star,
                              double radius);

/// The neural variant: stationarity measured against directions into the ball
/// of radius_T around the initialization, and the representation term fitted
/// with the feature map frozen at omega over that ball (first-order
/// surrogate). Requires a neural energy model.
BoundReport audit_rl_neural(const MetaRlTaskSet& set, const Vec& omega, const Vec& theta_star,
                                double radius_T);

}  // namespace metalab
