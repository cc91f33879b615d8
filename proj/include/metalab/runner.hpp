#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metalab/harness.hpp"

namespace metalab {

/// Strictly parsed experiment configuration; unknown keys are rejected.
struct ExperimentConfig {
    std::string mode;  // train-rl, train-sl, audit-rl, audit-sl, nn-linerr, gradcheck
    std::uint64_t seed = 1;
    int seeds = 1;  // consecutive seeds for audit / sweep modes

    // shared instance sizes and hyperparameters
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
    double alpha = 1e-3;
    int iterations = 500;
    double radius = 10.0;
    std::string parameterization = "linear";  // or "neural"
    int width = 256;
    int input_dim = 8;
    std::string init = "zero";  // or "gaussian"
    double init_scale = 0.1;

    // supervised-task fields
    int domain_size = 20;
    int label_count = 3;
    int sl_input_dim = 5;
    double y_max = 1.0;
    std::string sl_audit = "general";  // or kernel, neural

    // oracle and sweep fields
    int n_starts = 16;
    int star_iterations = 300;
    std::vector<int> m_values = {64, 256, 1024, 4096};
    int linerr_inputs = 64;
    std::string linerr_direction = "aligned";  // or "random"

    std::string task_set;  // optional path replacing the generator

    static ExperimentConfig from_file(const std::string& path);
    void validate() const;

    MdpFamilySpec mdp_spec() const;
    SlFamilySpec sl_spec() const;
};

/// Executes one configured pipeline and writes the CSV atomically.
/// Returns 0 on success, 2 when an audited inequality is violated.
/// Throws on validation errors (the CLI maps those to exit code 1).
int run_experiment(const ExperimentConfig& config, const std::string& out_path);

/// Full command-line entry point with the documented exit codes.
int run_cli(int argc, char** argv);

}  // namespace metalab
