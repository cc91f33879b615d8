#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "metalab/meta_rl.hpp"
#include "metalab/meta_sl.hpp"

namespace metalab {

/// Generator parameters for a family of similar MDP subtasks. Tasks are
/// delta-perturbations of a shared base instance; every transition row is
/// mixed with the uniform distribution at rate eps_mix so all visitation and
/// meta-visitation measures stay strictly positive.
struct MdpFamilySpec {
    int n_states = 6;
    int n_actions = 3;
    int n_tasks = 4;
    int feature_dim = 8;
    double gamma = 0.9;
    double q_max = 1.0;
    double eps_mix = 0.05;
    double delta = 0.1;
    double tau = 1.0;
    double eta = 0.1;
    bool neural = false;
    int width = 256;      // neural energy width
    int input_dim = 8;    // neural (s,a) embedding dimension

    void validate() const;
};

MetaRlTaskSet generate_mdp_family(const MdpFamilySpec& spec, std::uint64_t seed);

/// Generator parameters for supervised subtask families: a shared uniform
/// marginal over unit-ball points, per-task conditional means that are
/// delta-perturbed linear functions, and mean-preserving bounded label noise.
struct SlFamilySpec {
    int domain_size = 20;
    int input_dim = 5;
    int feature_dim = 8;
    int n_tasks = 4;
    int label_count = 3;  // <= 5
    double delta = 0.1;
    double eta = 0.1;
    double y_max = 1.0;
    bool neural = false;
    int width = 256;

    void validate() const;
};

SlTaskSet generate_sl_family(const SlFamilySpec& spec, std::uint64_t seed);

/// Central-difference gradient oracle.
Vec finite_diff_gradient(const std::function<double(const Vec&)>& objective, const Vec& point,
                         double step);

/// Parameter triple inside the radius ball around the initialization for
/// linearization-error sweeps. With aligned = true, the test direction w2 is
/// concentrated on the activation-flip set of the first input with
/// output-sign alignment -- the configuration whose error scales at the
/// width^{-1/2} rate the linearization bound states. Random in-ball
/// directions decay faster (about width^{-3/2}) because the flip-conditioned
/// pre-activations are themselves small.
struct LinearizationProbe {
    Vec w0, w1, w2;
};
LinearizationProbe linearization_probe(const TwoLayerNet& net, double radius, const Mat& inputs,
                                       std::uint64_t seed, bool aligned);

/// Multi-start ascent oracle for the best-found meta-RL optimum: one run from
/// the given center plus (n_starts - 1) runs from Gaussian perturbations of
/// it; the parameter with the best final objective wins.
Vec best_theta_rl(const MetaRlTaskSet& set, const Vec& center, int n_starts, int iterations,
                  double alpha, double init_scale, std::uint64_t seed);

/// Descent mirror for meta-SL.
Vec best_theta_sl(const SlTaskSet& set, const Vec& center, int n_starts, int iterations,
                  double alpha, double init_scale, std::uint64_t seed);

/// Deterministic CSV construction: fixed %.17g formatting, atomic write via a
/// temp file plus rename.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> columns);

    void add_row(const std::vector<double>& values);
    std::string str() const;
    void write_atomic(const std::string& path) const;

private:
    std::vector<std::string> columns_;
    std::string body_;
};

std::string format_csv_value(double value);

/// Runs fn(0..count-1), possibly concurrently, honoring the METALAB_THREADS
/// cap; the caller's state is indexed by the job id so the reduction order is
/// deterministic.
void parallel_for_ordered(int count, const std::function<void(int)>& fn);

}  // namespace metalab
