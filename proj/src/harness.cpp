#include "metalab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <mutex>
#include <random>
#include <stdexcept>
#include <thread>

#include "metalab/neural_net.hpp"

namespace metalab {

namespace {

Vec dirichlet_row(std::mt19937_64& rng, int size) {
    std::gamma_distribution<double> gamma(1.0, 1.0);
    Vec row(size);
    for (int k = 0; k < size; ++k) row(k) = gamma(rng);
    return row / row.sum();
}

Vec mix_uniform(const Vec& row, double eps) {
    return (1.0 - eps) * row + Vec::Constant(row.size(), eps / row.size());
}

Mat unit_rows(std::mt19937_64& rng, int rows, int cols) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Mat table(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) table(r, c) = gauss(rng);
        table.row(r) /= table.row(r).norm();
    }
    return table;
}

}  // namespace

void MdpFamilySpec::validate() const {
    if (n_states < 1 || n_actions < 1 || n_tasks < 1 || feature_dim < 1)
        throw std::invalid_argument("mdp family: sizes must be positive");
    if (gamma <= 0.0 || gamma >= 1.0) throw std::invalid_argument("mdp family: gamma in (0,1)");
    if (eps_mix <= 0.0 || eps_mix >= 1.0)
        throw std::invalid_argument("mdp family: eps_mix in (0,1)");
    if (delta < 0.0 || q_max <= 0.0 || tau <= 0.0 || eta < 0.0)
        throw std::invalid_argument("mdp family: bad hyperparameters");
    if (neural && (width < 2 || width % 2 != 0 || input_dim < 1))
        throw std::invalid_argument("mdp family: neural width must be even and positive");
}

MetaRlTaskSet generate_mdp_family(const MdpFamilySpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const int S = spec.n_states, A = spec.n_actions;

    Mat base_transition(S * A, S);
    for (int row = 0; row < S * A; ++row)
        base_transition.row(row) = mix_uniform(dirichlet_row(rng, S), spec.eps_mix).transpose();
    Mat base_reward(S, A);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) base_reward(s, a) = unit(rng) * spec.q_max;
    Vec zeta = mix_uniform(dirichlet_row(rng, S), spec.eps_mix);

    MetaRlTaskSet set;
    set.tau = spec.tau;
    set.eta = spec.eta;
    for (int i = 0; i < spec.n_tasks; ++i) {
        TabularMdp mdp;
        mdp.n_states = S;
        mdp.n_actions = A;
        mdp.discount = spec.gamma;
        mdp.init_dist = zeta;
        mdp.q_max = spec.q_max;
        mdp.transition.resize(S * A, S);
        for (int row = 0; row < S * A; ++row) {
            Vec perturbed = base_transition.row(row).transpose() + spec.delta * dirichlet_row(rng, S);
            perturbed /= perturbed.sum();
            mdp.transition.row(row) = mix_uniform(perturbed, spec.eps_mix).transpose();
        }
        mdp.reward.resize(S, A);
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < A; ++a)
                mdp.reward(s, a) = std::clamp(base_reward(s, a) + spec.delta * unit(rng) * spec.q_max,
                                              -spec.q_max, spec.q_max);
        mdp.validate();
        set.tasks.push_back(std::move(mdp));
    }

    if (spec.neural) {
        Mat embeddings = unit_rows(rng, S * A, spec.input_dim);
        std::uniform_int_distribution<std::uint64_t> any;
        TwoLayerNet net = TwoLayerNet::init_symmetric(spec.width, spec.input_dim, any(rng));
        set.energy = std::make_shared<NeuralEnergy>(std::move(net), std::move(embeddings), S, A);
    } else {
        FeatureMap map;
        map.table = unit_rows(rng, S * A, spec.feature_dim);
        set.energy = std::make_shared<LinearEnergy>(std::move(map), S, A);
    }
    set.validate();
    return set;
}

void SlFamilySpec::validate() const {
    if (domain_size < 1 || input_dim < 1 || feature_dim < 1 || n_tasks < 1)
        throw std::invalid_argument("sl family: sizes must be positive");
    if (label_count < 1 || label_count > 5)
        throw std::invalid_argument("sl family: label_count must lie in [1,5]");
    if (delta < 0.0 || eta < 0.0 || y_max <= 0.0)
        throw std::invalid_argument("sl family: bad hyperparameters");
    if (neural && (width < 2 || width % 2 != 0))
        throw std::invalid_argument("sl family: neural width must be even");
}

SlTaskSet generate_sl_family(const SlFamilySpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uniform01(0.0, 1.0);
    const int nx = spec.domain_size, p = spec.input_dim, d = spec.feature_dim;

    SlTaskSet set;
    set.eta = spec.eta;
    set.y_max = spec.y_max;
    set.domain.resize(nx, p);
    for (int x = 0; x < nx; ++x) {
        Vec point(p);
        for (int k = 0; k < p; ++k) point(k) = gauss(rng);
        const double radius = std::pow(uniform01(rng), 1.0 / p);
        set.domain.row(x) = (radius / point.norm()) * point.transpose();
    }
    set.marginal = Vec::Constant(nx, 1.0 / nx);

    Mat phi = unit_rows(rng, nx, d);

    // Conditional means: perturbed linear functions of the features, scaled so
    // mean plus noise amplitude stays inside [-y_max, y_max].
    Vec base_weights(d);
    for (int k = 0; k < d; ++k) base_weights(k) = gauss(rng);
    base_weights *= 0.6 * spec.y_max / base_weights.norm();

    for (int i = 0; i < spec.n_tasks; ++i) {
        Vec w = base_weights;
        if (spec.delta > 0.0) {
            Vec noise(d);
            for (int k = 0; k < d; ++k) noise(k) = gauss(rng);
            w += spec.delta * spec.y_max * noise / noise.norm();
        }
        if (w.norm() > 0.7 * spec.y_max) w *= 0.7 * spec.y_max / w.norm();
        const Vec means = phi * w;

        SlTask task;
        task.cond_mean = means;
        for (int x = 0; x < nx; ++x) {
            const double amp = 0.25 * spec.y_max * uniform01(rng);
            SlLabelSet ls;
            if (spec.label_count == 1) {
                ls.values = Vec::Constant(1, means(x));
                ls.probs = Vec::Constant(1, 1.0);
            } else if (spec.label_count == 2) {
                ls.values.resize(2);
                ls.values << means(x) - amp, means(x) + amp;
                ls.probs = Vec::Constant(2, 0.5);
            } else {
                // Symmetric three-point support keeps the conditional mean exact;
                // larger counts reuse it with extra zero-probability levels removed.
                const double q = 0.1 + 0.3 * uniform01(rng);
                ls.values.resize(3);
                ls.values << means(x) - amp, means(x), means(x) + amp;
                ls.probs.resize(3);
                ls.probs << q, 1.0 - 2.0 * q, q;
            }
            task.labels.push_back(std::move(ls));
        }
        set.tasks.push_back(std::move(task));
    }

    if (spec.neural) {
        std::uniform_int_distribution<std::uint64_t> any;
        TwoLayerNet net = TwoLayerNet::init_symmetric(spec.width, p, any(rng));
        set.model = std::make_shared<NeuralSlModel>(std::move(net), set.domain);
    } else {
        set.model = std::make_shared<LinearSlModel>(phi);
    }
    set.validate();
    return set;
}

Vec finite_diff_gradient(const std::function<double(const Vec&)>& objective, const Vec& point,
                         double step) {
    if (step <= 0.0) throw std::invalid_argument("finite_diff_gradient: step must be positive");
    Vec grad(point.size());
    Vec probe = point;
    for (int k = 0; k < point.size(); ++k) {
        probe(k) = point(k) + step;
        const double up = objective(probe);
        probe(k) = point(k) - step;
        const double down = objective(probe);
        probe(k) = point(k);
        if (!std::isfinite(up) || !std::isfinite(down))
            throw std::runtime_error("finite_diff_gradient: non-finite objective value");
        grad(k) = (up - down) / (2.0 * step);
    }
    return grad;
}

LinearizationProbe linearization_probe(const TwoLayerNet& net, double radius, const Mat& inputs,
                                       std::uint64_t seed, bool aligned) {
    if (inputs.rows() == 0 || inputs.cols() != net.input_dim)
        throw std::invalid_argument("linearization_probe: bad input table");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto sphere_point = [&]() {
        Vec dir(net.param_dim());
        for (int k = 0; k < dir.size(); ++k) dir(k) = gauss(rng);
        return Vec(net.w_init + radius * dir / dir.norm());
    };

    LinearizationProbe probe;
    probe.w0 = sphere_point();
    if (!aligned) {
        probe.w1 = sphere_point();
        probe.w2 = sphere_point();
        return probe;
    }
    probe.w1 = net.w_init;
    probe.w2 = net.w_init;

    // Flip set of the first input between the patterns of w0 and the
    // initialization; load the whole radius onto it, signed so every flipped
    // unit contributes with the same sign.
    const int m = net.width, d = net.input_dim;
    const Vec x = inputs.row(0).transpose();
    std::vector<int> flips;
    std::vector<double> signs;
    for (int r = 0; r < m; ++r) {
        const double z0 = probe.w0.segment(r * d, d).dot(x);
        const double zi = net.w_init.segment(r * d, d).dot(x);
        const double flip = (z0 > 0.0 ? 1.0 : 0.0) - (zi > 0.0 ? 1.0 : 0.0);
        if (flip != 0.0) {
            flips.push_back(r);
            signs.push_back(net.sign(r) * flip);
        }
    }
    if (flips.empty()) {
        probe.w2 = sphere_point();
        return probe;
    }
    const double per_block = radius / std::sqrt(static_cast<double>(flips.size())) / x.norm();
    for (size_t j = 0; j < flips.size(); ++j)
        probe.w2.segment(flips[j] * d, d) += signs[j] * per_block * x;
    return probe;
}

Vec best_theta_rl(const MetaRlTaskSet& set, const Vec& center, int n_starts, int iterations,
                  double alpha, double init_scale, std::uint64_t seed) {
    if (n_starts < 1) throw std::invalid_argument("best_theta_rl: n_starts must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec best;
    double best_value = -std::numeric_limits<double>::infinity();
    for (int start = 0; start < n_starts; ++start) {
        Vec theta0 = center;
        if (start > 0)
            for (int k = 0; k < theta0.size(); ++k) theta0(k) += init_scale * gauss(rng);
        const MetaRlState state = run_meta_rl(set, theta0, {alpha}, iterations);
        if (state.objective() > best_value) {
            best_value = state.objective();
            best = state.theta;
        }
    }
    return best;
}

Vec best_theta_sl(const SlTaskSet& set, const Vec& center, int n_starts, int iterations,
                  double alpha, double init_scale, std::uint64_t seed) {
    if (n_starts < 1) throw std::invalid_argument("best_theta_sl: n_starts must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec best;
    double best_value = std::numeric_limits<double>::infinity();
    for (int start = 0; start < n_starts; ++start) {
        Vec theta0 = center;
        if (start > 0)
            for (int k = 0; k < theta0.size(); ++k) theta0(k) += init_scale * gauss(rng);
        const SlRunState state = run_meta_sl(set, theta0, {alpha}, iterations);
        if (state.objective() < best_value) {
            best_value = state.objective();
            best = state.theta;
        }
    }
    return best;
}

std::string format_csv_value(double value) {
    if (value == std::floor(value) && std::abs(value) < 1e15) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.0f", value);
        return buf;
    }
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

CsvWriter::CsvWriter(std::vector<std::string> columns) : columns_(std::move(columns)) {}

void CsvWriter::add_row(const std::vector<double>& values) {
    if (values.size() != columns_.size())
        throw std::invalid_argument("csv: row width does not match the header");
    for (size_t k = 0; k < values.size(); ++k) {
        body_ += format_csv_value(values[k]);
        body_ += (k + 1 == values.size()) ? '\n' : ',';
    }
}

std::string CsvWriter::str() const {
    std::string out;
    for (size_t k = 0; k < columns_.size(); ++k) {
        out += columns_[k];
        out += (k + 1 == columns_.size()) ? '\n' : ',';
    }
    return out + body_;
}

void CsvWriter::write_atomic(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
        if (!file) throw std::runtime_error("csv: cannot open " + tmp);
        file << str();
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("csv: cannot rename " + tmp + " to " + path);
}

void parallel_for_ordered(int count, const std::function<void(int)>& fn) {
    int threads = static_cast<int>(std::thread::hardware_concurrency());
    if (const char* cap = std::getenv("METALAB_THREADS")) {
        const int parsed = std::atoi(cap);
        if (parsed > 0) threads = parsed;
    }
    threads = std::max(1, std::min(threads, count));
    if (threads == 1) {
        for (int job = 0; job < count; ++job) fn(job);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (int job = next.fetch_add(1); job < count; job = next.fetch_add(1)) {
                try {
                    fn(job);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    for (auto& worker : pool) worker.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace metalab
