#include "metalab/policy.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace metalab {

void FeatureMap::validate() const {
    if (table.rows() == 0 || table.cols() == 0)
        throw std::invalid_argument("feature map: empty table");
    if (!table.allFinite()) throw std::invalid_argument("feature map: non-finite entries");
    for (int row = 0; row < table.rows(); ++row)
        if (table.row(row).norm() > 1.0 + 1e-9)
            throw std::invalid_argument("feature map: row norm exceeds 1");
}

PolicyTable softmax_policy(const Mat& energy, double temperature) {
    if (temperature <= 0.0) throw std::invalid_argument("softmax_policy: temperature must be positive");
    if (!energy.allFinite()) throw std::invalid_argument("softmax_policy: non-finite energy");
    PolicyTable out;
    out.probs.resize(energy.rows(), energy.cols());
    for (int s = 0; s < energy.rows(); ++s) {
        Eigen::RowVectorXd z = energy.row(s) / temperature;
        z.array() -= z.maxCoeff();
        Eigen::RowVectorXd e = z.array().exp();
        out.probs.row(s) = e / e.sum();
    }
    return out;
}

AdaptedPolicy ppo_inner_step(const Mat& main_effect_energy, const Mat& q, double eta,
                             double temperature) {
    if (eta < 0.0) throw std::invalid_argument("ppo_inner_step: eta must be nonnegative");
    if (temperature <= 0.0) throw std::invalid_argument("ppo_inner_step: temperature must be positive");
    if (main_effect_energy.rows() != q.rows() || main_effect_energy.cols() != q.cols())
        throw std::invalid_argument("ppo_inner_step: energy/q dimension mismatch");
    AdaptedPolicy out;
    out.logits = main_effect_energy / temperature + eta * q;
    out.probs = softmax_policy(out.logits, 1.0);
    return out;
}

double ppo_objective(const PolicyTable& candidate, const PolicyTable& main_effect, const Mat& q,
                     double eta, const Vec& nu) {
    if (eta <= 0.0) throw std::invalid_argument("ppo_objective: eta must be positive");
    if (candidate.probs.rows() != q.rows() || candidate.probs.cols() != q.cols() ||
        main_effect.probs.rows() != q.rows() || main_effect.probs.cols() != q.cols() ||
        nu.size() != q.rows())
        throw std::invalid_argument("ppo_objective: dimension mismatch");
    if (candidate.probs.minCoeff() <= 0.0 || main_effect.probs.minCoeff() <= 0.0)
        throw std::invalid_argument("ppo_objective: zero policy entry makes the KL term infinite");

    double total = 0.0;
    for (int s = 0; s < q.rows(); ++s) {
        double gain = candidate.probs.row(s).dot(q.row(s));
        double kl = 0.0;
        for (int a = 0; a < q.cols(); ++a)
            kl += candidate.probs(s, a) *
                  (std::log(candidate.probs(s, a)) - std::log(main_effect.probs(s, a)));
        total += nu(s) * (gain - kl / eta);
    }
    return total;
}

LinearEnergy::LinearEnergy(FeatureMap features, int states, int actions)
    : features_(std::move(features)), n_states_(states), n_actions_(actions) {
    features_.validate();
    if (features_.table.rows() != static_cast<long>(states) * actions)
        throw std::invalid_argument("linear energy: feature rows must equal n_states * n_actions");
}

Mat LinearEnergy::energy(const Vec& params) const {
    if (params.size() != dim()) throw std::invalid_argument("linear energy: parameter size mismatch");
    Vec flat = features_.table * params;
    Mat out(n_states_, n_actions_);
    for (int s = 0; s < n_states_; ++s)
        for (int a = 0; a < n_actions_; ++a) out(s, a) = flat(s * n_actions_ + a);
    return out;
}

}  // namespace metalab
