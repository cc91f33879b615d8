#pragma once

#include <memory>

#include "metalab/tabular_mdp.hpp"

namespace metalab {

/// Precomputed feature vectors phi(s,a), one row per flattened (s,a) pair.
/// Generators keep every row inside the unit ball.
struct FeatureMap {
    Mat table;  // (S*A) x d

    int dim() const { return static_cast<int>(table.cols()); }
    void validate() const;
};

/// Row softmax of energy / temperature, stabilized by per-row max subtraction.
PolicyTable softmax_policy(const Mat& energy, double temperature);

/// One KL-proximal policy-improvement step applied to a softmax main effect.
/// The logits are kept so downstream consumers can compose further softmax
/// sums without renormalization error.
struct AdaptedPolicy {
    PolicyTable probs;
    Mat logits;  // energy / tau + eta * q
};

/// Closed-form maximizer of the proximal objective: row softmax of
/// energy(s,.) / tau + eta * q(s,.).
AdaptedPolicy ppo_inner_step(const Mat& main_effect_energy, const Mat& q, double eta,
                             double temperature);

/// Proximal objective value
///   sum_s nu(s) [ <q(s,.), candidate(s,.)> - 1/eta KL(candidate || main) ].
/// Throws if eta <= 0 or either policy has a zero entry (infinite KL).
double ppo_objective(const PolicyTable& candidate, const PolicyTable& main_effect, const Mat& q,
                     double eta, const Vec& nu);

/// Energy function of a softmax policy over a fixed finite state-action space.
/// features(params) returns the gradient of the energy in the parameters, one
/// row per (s,a); for linear energies it is constant, for neural energies it
/// is the almost-everywhere gradient at the current parameters.
class EnergyModel {
public:
    virtual ~EnergyModel() = default;
    virtual int dim() const = 0;
    virtual int n_states() const = 0;
    virtual int n_actions() const = 0;
    virtual Mat energy(const Vec& params) const = 0;    // S x A
    virtual Mat features(const Vec& params) const = 0;  // (S*A) x dim
    /// Initialization point for models with a distinguished one (neural nets);
    /// nullptr for linear models.
    virtual const Vec* init_params() const { return nullptr; }
};

class LinearEnergy final : public EnergyModel {
public:
    LinearEnergy(FeatureMap features, int states, int actions);

    int dim() const override { return features_.dim(); }
    int n_states() const override { return n_states_; }
    int n_actions() const override { return n_actions_; }
    Mat energy(const Vec& params) const override;
    Mat features(const Vec&) const override { return features_.table; }
    const FeatureMap& feature_map() const { return features_; }

private:
    FeatureMap features_;
    int n_states_;
    int n_actions_;
};

}  // namespace metalab
