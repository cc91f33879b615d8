#pragma once

#include <cstdint>
#include <memory>

#include "metalab/policy.hpp"

namespace metalab {

/// Width-m two-layer ReLU network f(x; W) = 1/sqrt(m) sum_r b_r relu(w_r.x)
/// with fixed output signs b_r = +1 for r < m/2 and -1 otherwise, and paired
/// Gaussian initialization [W]_r = [W]_{r+m/2} so the initial output is
/// exactly zero for every input.
///
/// Evaluation computes the two sign halves with identical matrix products, so
/// the cancellation at the initialization is bitwise exact, and the feature
/// dot product phi_W(x)^T W reproduces f(x; W) exactly (ReLU homogeneity with
/// the same per-term products and summation order).
struct TwoLayerNet {
    int width = 0;      // m, even
    int input_dim = 0;  // d
    Vec w_init;         // m*d, blocks of length d

    int param_dim() const { return width * input_dim; }
    double sign(int r) const { return r < width / 2 ? 1.0 : -1.0; }

    /// Paired N(0, I_d / d) blocks; deterministic given the seed.
    static TwoLayerNet init_symmetric(int m, int d, std::uint64_t seed);
};

/// f(x_k; params) for every row x_k of inputs.
Vec nn_forward(const TwoLayerNet& net, const Vec& params, const Mat& inputs);

/// phi_params(x_k)^T v for every row, where phi uses the activation pattern
/// of `params` (strict inequality at the kink: derivative zero there).
Vec nn_feature_dot(const TwoLayerNet& net, const Vec& params, const Mat& inputs, const Vec& v);

/// Dense feature matrix, one row per input, m*d columns.
Mat nn_features(const TwoLayerNet& net, const Vec& params, const Mat& inputs);

/// Exact squared L2(measure) norm of phi_{w0}(.)^T w2 - phi_{w1}(.)^T w2 over
/// the finite input support. Parameters outside the ball of the given radius
/// around the initialization are tolerated; callers that care should check
/// `radius_exceeded` first.
struct LinearizationError {
    double value = 0.0;
    bool radius_exceeded = false;
};
LinearizationError linearization_error(const TwoLayerNet& net, const Vec& w0, const Vec& w1,
                                       const Vec& w2, const Mat& inputs, const Vec& measure,
                                       double radius);

/// Softmax-policy energy given by a two-layer network over fixed per-pair
/// input embeddings (one row per flattened (s,a), norms at most 1).
class NeuralEnergy final : public EnergyModel {
public:
    NeuralEnergy(TwoLayerNet net, Mat embeddings, int states, int actions);

    int dim() const override { return net_.param_dim(); }
    int n_states() const override { return n_states_; }
    int n_actions() const override { return n_actions_; }
    Mat energy(const Vec& params) const override;
    Mat features(const Vec& params) const override;
    const Vec* init_params() const override { return &net_.w_init; }

    const TwoLayerNet& net() const { return net_; }
    const Mat& embeddings() const { return embeddings_; }

private:
    TwoLayerNet net_;
    Mat embeddings_;  // (S*A) x input_dim
    int n_states_;
    int n_actions_;
};

}  // namespace metalab
