#include "metalab/trust_region.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

namespace metalab {

LinearFit best_linear_fit(const Vec& target, const Mat& features, const Vec& weights,
                          double radius) {
    if (radius <= 0.0) throw std::invalid_argument("best_linear_fit: radius must be positive");
    if (target.size() != features.rows() || weights.size() != features.rows())
        throw std::invalid_argument("best_linear_fit: row count mismatch");
    if (weights.minCoeff() < 0.0)
        throw std::invalid_argument("best_linear_fit: negative weight");

    const Vec root_w = weights.array().sqrt();
    const Mat design = features.array().colwise() * root_w.array();
    const Vec b = (target.array() * root_w.array()).matrix();

    Eigen::BDCSVD<Mat> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vec& sing = svd.singularValues();
    const Vec y = svd.matrixU().transpose() * b;
    const double cutoff = sing.size() > 0 ? sing(0) * 1e-13 : 0.0;

    auto coeffs_for = [&](double lambda) {
        Vec c = Vec::Zero(sing.size());
        for (int j = 0; j < sing.size(); ++j) {
            if (sing(j) <= cutoff) continue;
            c(j) = sing(j) * y(j) / (sing(j) * sing(j) + lambda);
        }
        return c;
    };

    LinearFit fit;
    Vec c = coeffs_for(0.0);
    if (c.norm() > radius + 1e-12) {
        // ||v(lambda)|| is strictly decreasing; bracket then bisect.
        double lo = 0.0, hi = 1.0;
        while (coeffs_for(hi).norm() > radius) hi *= 2.0;
        for (int iter = 0; iter < 200; ++iter) {
            const double mid = 0.5 * (lo + hi);
            const double norm = coeffs_for(mid).norm();
            if (norm > radius)
                lo = mid;
            else
                hi = mid;
            if (std::abs(norm - radius) <= 1e-10 * std::max(1.0, radius)) {
                lo = hi = mid;
                break;
            }
        }
        fit.ridge = 0.5 * (lo + hi);
        c = coeffs_for(fit.ridge);
    }
    fit.v = svd.matrixV() * c;
    fit.residual = (b - design * fit.v).norm();
    return fit;
}

}  // namespace metalab
