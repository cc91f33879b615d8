#include "metalab/neural_net.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <utility>

namespace metalab {

namespace {

// Blocks as an (m x d) matrix view; pre-activations come out as one GEMM per
// sign half so bitwise-equal halves produce bitwise-equal columns.
Mat block_matrix(const Vec& params, int m, int d) {
    Mat w(m, d);
    for (int r = 0; r < m; ++r)
        for (int k = 0; k < d; ++k) w(r, k) = params(r * d + k);
    return w;
}

struct HalfActivations {
    Mat upper;  // N x m/2
    Mat lower;  // N x m/2
};

HalfActivations preactivations(const TwoLayerNet& net, const Vec& params, const Mat& inputs) {
    if (params.size() != net.param_dim())
        throw std::invalid_argument("two-layer net: parameter size mismatch");
    if (inputs.cols() != net.input_dim)
        throw std::invalid_argument("two-layer net: input dimension mismatch");
    const int h = net.width / 2, d = net.input_dim;
    Mat w = block_matrix(params, net.width, d);
    HalfActivations z;
    z.upper = inputs * w.topRows(h).transpose();
    z.lower = inputs * w.bottomRows(h).transpose();
    return z;
}

}  // namespace

TwoLayerNet TwoLayerNet::init_symmetric(int m, int d, std::uint64_t seed) {
    if (m < 2 || m % 2 != 0) throw std::invalid_argument("two-layer net: width must be even and >= 2");
    if (d < 1) throw std::invalid_argument("two-layer net: input_dim must be positive");
    TwoLayerNet net;
    net.width = m;
    net.input_dim = d;
    net.w_init.resize(m * d);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    const int h = m / 2;
    for (int r = 0; r < h; ++r)
        for (int k = 0; k < d; ++k) {
            const double value = gauss(rng);
            net.w_init(r * d + k) = value;
            net.w_init((r + h) * d + k) = value;
        }
    return net;
}

Vec nn_forward(const TwoLayerNet& net, const Vec& params, const Mat& inputs) {
    HalfActivations z = preactivations(net, params, inputs);
    const double scale = 1.0 / std::sqrt(static_cast<double>(net.width));
    Vec up = (z.upper.array() * (z.upper.array() > 0.0).cast<double>()).rowwise().sum();
    Vec lo = (z.lower.array() * (z.lower.array() > 0.0).cast<double>()).rowwise().sum();
    return scale * (up - lo);
}

Vec nn_feature_dot(const TwoLayerNet& net, const Vec& params, const Mat& inputs, const Vec& v) {
    HalfActivations z = preactivations(net, params, inputs);
    HalfActivations zv = preactivations(net, v, inputs);
    const double scale = 1.0 / std::sqrt(static_cast<double>(net.width));
    Vec up = (zv.upper.array() * (z.upper.array() > 0.0).cast<double>()).rowwise().sum();
    Vec lo = (zv.lower.array() * (z.lower.array() > 0.0).cast<double>()).rowwise().sum();
    return scale * (up - lo);
}

Mat nn_features(const TwoLayerNet& net, const Vec& params, const Mat& inputs) {
    HalfActivations z = preactivations(net, params, inputs);
    const int n = static_cast<int>(inputs.rows());
    const int h = net.width / 2, d = net.input_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(net.width));
    Mat phi = Mat::Zero(n, net.param_dim());
    for (int k = 0; k < n; ++k) {
        for (int r = 0; r < h; ++r)
            if (z.upper(k, r) > 0.0) phi.block(k, r * d, 1, d) = scale * inputs.row(k);
        for (int r = 0; r < h; ++r)
            if (z.lower(k, r) > 0.0) phi.block(k, (r + h) * d, 1, d) = -scale * inputs.row(k);
    }
    return phi;
}

LinearizationError linearization_error(const TwoLayerNet& net, const Vec& w0, const Vec& w1,
                                       const Vec& w2, const Mat& inputs, const Vec& measure,
                                       double radius) {
    if (measure.size() != inputs.rows())
        throw std::invalid_argument("linearization_error: measure/input size mismatch");
    LinearizationError out;
    out.radius_exceeded = (w0 - net.w_init).norm() > radius + 1e-12 ||
                          (w1 - net.w_init).norm() > radius + 1e-12 ||
                          (w2 - net.w_init).norm() > radius + 1e-12;
    Vec diff = nn_feature_dot(net, w0, inputs, w2) - nn_feature_dot(net, w1, inputs, w2);
    out.value = (measure.array() * diff.array().square()).sum();
    return out;
}

NeuralEnergy::NeuralEnergy(TwoLayerNet net, Mat embeddings, int states, int actions)
    : net_(std::move(net)), embeddings_(std::move(embeddings)), n_states_(states), n_actions_(actions) {
    if (embeddings_.rows() != static_cast<long>(states) * actions)
        throw std::invalid_argument("neural energy: one embedding row per state-action pair required");
    if (embeddings_.cols() != net_.input_dim)
        throw std::invalid_argument("neural energy: embedding dimension mismatch");
    for (int row = 0; row < embeddings_.rows(); ++row)
        if (embeddings_.row(row).norm() > 1.0 + 1e-9)
            throw std::invalid_argument("neural energy: embedding norm exceeds 1");
}

Mat NeuralEnergy::energy(const Vec& params) const {
    Vec flat = nn_forward(net_, params, embeddings_);
    Mat out(n_states_, n_actions_);
    for (int s = 0; s < n_states_; ++s)
        for (int a = 0; a < n_actions_; ++a) out(s, a) = flat(s * n_actions_ + a);
    return out;
}

Mat NeuralEnergy::features(const Vec& params) const { return nn_features(net_, params, embeddings_); }

}  // namespace metalab
