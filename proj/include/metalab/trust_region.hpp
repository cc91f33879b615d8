#pragma once

#include "metalab/tabular_mdp.hpp"

namespace metalab {

struct LinearFit {
    Vec v;                  // minimizer, ||v|| <= radius
    double residual = 0.0;  // weighted L2 norm of target - features * v
    double ridge = 0.0;     // ridge multiplier, 0 when the constraint is inactive
};

/// Solves min_{||v||_2 <= radius} sum_k weights_k (target_k - features.row(k) v)^2
/// and returns the minimizer together with the weighted L2 residual norm.
///
/// The unconstrained problem is solved through an SVD of the weighted design
/// matrix (minimum-norm solution on rank deficiency); when the minimizer
/// leaves the ball, the ridge multiplier is bisected until ||v(lambda)|| hits
/// the radius within 1e-10.
LinearFit best_linear_fit(const Vec& target, const Mat& features, const Vec& weights,
                          double radius);

}  // namespace metalab
