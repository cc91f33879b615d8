#include "metalab/runner.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

#include "metalab/rl_audit.hpp"
#include "metalab/serialization.hpp"

namespace metalab {

namespace {

const std::set<std::string> kModes = {"train-rl", "train-sl", "audit-rl",
                                      "audit-sl", "nn-linerr", "gradcheck"};

std::uint64_t substream(std::uint64_t seed, std::uint64_t stream) {
    return seed * 6364136223846793005ULL + 0x9E3779B97F4A7C15ULL * (stream + 1);
}

Vec initial_theta(const ExperimentConfig& config, int dim, const Vec* w_init,
                  std::uint64_t seed) {
    Vec theta = w_init != nullptr ? *w_init : Vec::Zero(dim);
    if (config.init == "gaussian") {
        std::mt19937_64 rng(substream(seed, 7));
        std::normal_distribution<double> gauss(0.0, config.init_scale);
        for (int k = 0; k < dim; ++k) theta(k) += gauss(rng);
    }
    return theta;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    const Json j = load_json_file(path);
    static const std::set<std::string> known = {
        "mode",         "seed",        "seeds",          "n_states",   "n_actions",
        "n_tasks",      "feature_dim", "gamma",          "q_max",      "eps_mix",
        "delta",        "tau",         "eta",            "alpha",      "iterations",
        "radius",       "parameterization",              "width",      "input_dim",
        "init",         "init_scale",  "domain_size",    "label_count", "sl_input_dim",
        "y_max",        "sl_audit",    "n_starts",       "star_iterations",
        "m_values",     "linerr_inputs", "linerr_direction", "task_set"};
    for (const auto& [key, value] : j.items())
        if (known.find(key) == known.end())
            throw std::invalid_argument("config: unknown key '" + key + "'");

    ExperimentConfig c;
    c.mode = j.value("mode", std::string());
    c.seed = j.value("seed", static_cast<std::uint64_t>(1));
    c.seeds = j.value("seeds", 1);
    c.n_states = j.value("n_states", c.n_states);
    c.n_actions = j.value("n_actions", c.n_actions);
    c.n_tasks = j.value("n_tasks", c.n_tasks);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.gamma = j.value("gamma", c.gamma);
    c.q_max = j.value("q_max", c.q_max);
    c.eps_mix = j.value("eps_mix", c.eps_mix);
    c.delta = j.value("delta", c.delta);
    c.tau = j.value("tau", c.tau);
    c.eta = j.value("eta", c.eta);
    c.alpha = j.value("alpha", c.alpha);
    c.iterations = j.value("iterations", c.iterations);
    c.radius = j.value("radius", c.radius);
    c.parameterization = j.value("parameterization", c.parameterization);
    c.width = j.value("width", c.width);
    c.input_dim = j.value("input_dim", c.input_dim);
    c.init = j.value("init", c.init);
    c.init_scale = j.value("init_scale", c.init_scale);
    c.domain_size = j.value("domain_size", c.domain_size);
    c.label_count = j.value("label_count", c.label_count);
    c.sl_input_dim = j.value("sl_input_dim", c.sl_input_dim);
    c.y_max = j.value("y_max", c.y_max);
    c.sl_audit = j.value("sl_audit", c.sl_audit);
    c.n_starts = j.value("n_starts", c.n_starts);
    c.star_iterations = j.value("star_iterations", c.star_iterations);
    if (j.contains("m_values")) c.m_values = j.at("m_values").get<std::vector<int>>();
    c.linerr_inputs = j.value("linerr_inputs", c.linerr_inputs);
    c.linerr_direction = j.value("linerr_direction", c.linerr_direction);
    c.task_set = j.value("task_set", std::string());
    return c;
}

void ExperimentConfig::validate() const {
    if (kModes.find(mode) == kModes.end())
        throw std::invalid_argument("config: mode must be one of train-rl, train-sl, audit-rl, "
                                    "audit-sl, nn-linerr, gradcheck");
    if (seeds < 1) throw std::invalid_argument("config: seeds must be >= 1");
    if (iterations < 1) throw std::invalid_argument("config: iterations must be >= 1");
    if (alpha <= 0.0) throw std::invalid_argument("config: alpha must be positive");
    if (radius <= 0.0) throw std::invalid_argument("config: radius must be positive");
    if (eps_mix <= 0.0 || eps_mix >= 1.0)
        throw std::invalid_argument("config: eps_mix must lie in (0,1)");
    if (parameterization != "linear" && parameterization != "neural")
        throw std::invalid_argument("config: parameterization must be linear or neural");
    if (init != "zero" && init != "gaussian")
        throw std::invalid_argument("config: init must be zero or gaussian");
    if (sl_audit != "general" && sl_audit != "kernel" && sl_audit != "neural")
        throw std::invalid_argument("config: sl_audit must be general, kernel or neural");
    if (n_starts < 1 || star_iterations < 1)
        throw std::invalid_argument("config: oracle settings must be positive");
    if (m_values.empty()) throw std::invalid_argument("config: m_values must be nonempty");
    if (linerr_direction != "aligned" && linerr_direction != "random")
        throw std::invalid_argument("config: linerr_direction must be aligned or random");
    mdp_spec().validate();
    sl_spec().validate();
}

MdpFamilySpec ExperimentConfig::mdp_spec() const {
    MdpFamilySpec spec;
    spec.n_states = n_states;
    spec.n_actions = n_actions;
    spec.n_tasks = n_tasks;
    spec.feature_dim = feature_dim;
    spec.gamma = gamma;
    spec.q_max = q_max;
    spec.eps_mix = eps_mix;
    spec.delta = delta;
    spec.tau = tau;
    spec.eta = eta;
    spec.neural = parameterization == "neural";
    spec.width = width;
    spec.input_dim = input_dim;
    return spec;
}

SlFamilySpec ExperimentConfig::sl_spec() const {
    SlFamilySpec spec;
    spec.domain_size = domain_size;
    spec.input_dim = sl_input_dim;
    spec.feature_dim = feature_dim;
    spec.n_tasks = n_tasks;
    spec.label_count = label_count;
    spec.delta = delta;
    spec.eta = eta;
    spec.y_max = y_max;
    spec.neural = parameterization == "neural";
    spec.width = width;
    return spec;
}

namespace {

MetaRlTaskSet rl_set_for(const ExperimentConfig& config, std::uint64_t seed) {
    if (!config.task_set.empty()) return rl_task_set_from_json(load_json_file(config.task_set));
    return generate_mdp_family(config.mdp_spec(), seed);
}

SlTaskSet sl_set_for(const ExperimentConfig& config, std::uint64_t seed) {
    if (!config.task_set.empty()) return sl_task_set_from_json(load_json_file(config.task_set));
    return generate_sl_family(config.sl_spec(), seed);
}

int run_train_rl(const ExperimentConfig& config, const std::string& out_path) {
    const MetaRlTaskSet set = rl_set_for(config, config.seed);
    const Vec theta0 =
        initial_theta(config, set.energy->dim(), set.energy->init_params(), config.seed);
    const MetaRlState state = run_meta_rl(set, theta0, {config.alpha}, config.iterations);

    CsvWriter csv({"iteration", "objective", "grad_norm", "epsilon"});
    for (size_t it = 0; it < state.objective_history.size(); ++it)
        csv.add_row({static_cast<double>(it), state.objective_history[it],
                     state.grad_norm_history[it], state.grad_norm_history[it]});
    csv.write_atomic(out_path);
    std::printf("train-rl: %d iterations, objective %.12g, grad norm %.3e\n", state.iteration,
                state.objective(), state.epsilon());
    return 0;
}

int run_train_sl(const ExperimentConfig& config, const std::string& out_path) {
    const SlTaskSet set = sl_set_for(config, config.seed);
    const Vec theta0 =
        initial_theta(config, set.model->dim(), set.model->init_params(), config.seed);
    const SlRunState state = run_meta_sl(set, theta0, {config.alpha}, config.iterations);

    CsvWriter csv({"iteration", "objective", "grad_norm", "epsilon"});
    for (size_t it = 0; it < state.objective_history.size(); ++it)
        csv.add_row({static_cast<double>(it), state.objective_history[it],
                     state.grad_norm_history[it], state.grad_norm_history[it]});
    csv.write_atomic(out_path);
    std::printf("train-sl: %d iterations, objective %.12g, grad norm %.3e\n", state.iteration,
                state.objective(), state.epsilon());
    return 0;
}

int run_audit_rl(const ExperimentConfig& config, const std::string& out_path) {
    std::vector<BoundReport> reports(config.seeds);
    parallel_for_ordered(config.seeds, [&](int job) {
        const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(job);
        const MetaRlTaskSet set = rl_set_for(config, seed);
        const Vec* w_init = set.energy->init_params();
        const Vec center = w_init != nullptr ? *w_init : Vec::Zero(set.energy->dim());
        const MetaRlState omega_run = run_meta_rl(set, center, {config.alpha}, config.iterations);
        const Vec theta_star =
            best_theta_rl(set, center, config.n_starts, config.star_iterations, config.alpha,
                          config.init_scale, substream(seed, 11));
        if (w_init != nullptr) {
            const double radius_t = std::max(omega_run.path_length, 1e-3);
            reports[job] = audit_rl_neural(set, omega_run.theta, theta_star, radius_t);
        } else {
            reports[job] = audit_rl_linear(set, omega_run.theta, theta_star, config.radius);
        }
    });

    CsvWriter csv({"seed", "lhs", "epsilon", "radius", "c0", "const", "approx_error", "rhs",
                   "holds", "degenerate_points"});
    bool all_hold = true;
    for (int job = 0; job < config.seeds; ++job) {
        const BoundReport& r = reports[job];
        all_hold = all_hold && r.holds;
        csv.add_row({static_cast<double>(config.seed + job), r.lhs, r.epsilon, r.radius, r.c0,
                     r.constant, r.approx_error, r.rhs, r.holds ? 1.0 : 0.0,
                     static_cast<double>(r.degenerate_points)});
    }
    csv.write_atomic(out_path);
    std::printf("audit-rl: %d/%d bounds hold\n",
                static_cast<int>(std::count_if(reports.begin(), reports.end(),
                                               [](const BoundReport& r) { return r.holds; })),
                config.seeds);
    return all_hold ? 0 : 2;
}

int run_audit_sl(const ExperimentConfig& config, const std::string& out_path) {
    std::vector<SlBoundReport> reports(config.seeds);
    parallel_for_ordered(config.seeds, [&](int job) {
        const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(job);
        const SlTaskSet set = sl_set_for(config, seed);
        const Vec* w_init = set.model->init_params();
        const Vec center = w_init != nullptr ? *w_init : Vec::Zero(set.model->dim());
        const SlRunState omega_run = run_meta_sl(set, center, {config.alpha}, config.iterations);
        const Vec theta_star =
            best_theta_sl(set, center, config.n_starts, config.star_iterations, config.alpha,
                          config.init_scale, substream(seed, 13));
        if (config.sl_audit == "neural") {
            const double radius_t = std::max(omega_run.path_length, 1e-3);
            reports[job] = audit_sl_neural(set, omega_run.theta, theta_star, radius_t);
        } else if (config.sl_audit == "kernel") {
            reports[job] = audit_sl_kernel(set, omega_run.theta, theta_star, config.radius);
        } else {
            reports[job] = audit_sl_general(set, omega_run.theta, theta_star, config.radius);
        }
    });

    CsvWriter csv({"seed", "lhs", "epsilon", "radius", "term_ii", "approx_error", "rhs", "holds",
                   "degenerate_points"});
    bool all_hold = true;
    for (int job = 0; job < config.seeds; ++job) {
        const SlBoundReport& r = reports[job];
        all_hold = all_hold && r.holds;
        csv.add_row({static_cast<double>(config.seed + job), r.lhs, r.epsilon, r.radius, r.term_ii,
                     r.term_iii, r.rhs, r.holds ? 1.0 : 0.0,
                     static_cast<double>(r.degenerate_points)});
    }
    csv.write_atomic(out_path);
    std::printf("audit-sl (%s): %d/%d bounds hold\n", config.sl_audit.c_str(),
                static_cast<int>(std::count_if(reports.begin(), reports.end(),
                                               [](const SlBoundReport& r) { return r.holds; })),
                config.seeds);
    return all_hold ? 0 : 2;
}

int run_nn_linerr(const ExperimentConfig& config, const std::string& out_path) {
    const int n_m = static_cast<int>(config.m_values.size());
    Mat errors(config.seeds, n_m);
    parallel_for_ordered(config.seeds, [&](int job) {
        const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(job);
        std::mt19937_64 input_rng(substream(seed, 3));
        std::normal_distribution<double> gauss(0.0, 1.0);
        Mat inputs(config.linerr_inputs, config.input_dim);
        for (int r = 0; r < inputs.rows(); ++r) {
            for (int c = 0; c < inputs.cols(); ++c) inputs(r, c) = gauss(input_rng);
            inputs.row(r) /= inputs.row(r).norm();
        }
        const Vec measure = Vec::Constant(inputs.rows(), 1.0 / inputs.rows());
        for (int mi = 0; mi < n_m; ++mi) {
            const int m = config.m_values[mi];
            const TwoLayerNet net =
                TwoLayerNet::init_symmetric(m, config.input_dim, substream(seed, 17 + mi));
            const LinearizationProbe probe =
                linearization_probe(net, config.radius, inputs, substream(seed, 29 + mi),
                                    config.linerr_direction == "aligned");
            errors(job, mi) =
                linearization_error(net, probe.w0, probe.w1, probe.w2, inputs, measure,
                                    config.radius)
                    .value;
        }
    });

    CsvWriter csv({"seed", "m", "radius", "error"});
    for (int job = 0; job < config.seeds; ++job)
        for (int mi = 0; mi < n_m; ++mi)
            csv.add_row({static_cast<double>(config.seed + job),
                         static_cast<double>(config.m_values[mi]), config.radius,
                         errors(job, mi)});
    csv.write_atomic(out_path);

    // Log-log slope of the seed-averaged error against the width.
    Vec x(n_m), y(n_m);
    for (int mi = 0; mi < n_m; ++mi) {
        x(mi) = std::log(static_cast<double>(config.m_values[mi]));
        y(mi) = std::log(errors.col(mi).mean());
    }
    const double xm = x.mean(), ym = y.mean();
    const double slope = (x.array() - xm).cwiseProduct(y.array() - ym).sum() /
                         (x.array() - xm).square().sum();
    std::printf("nn-linerr: fitted log-log slope %.4f over %d widths, %d seeds\n", slope, n_m,
                config.seeds);
    return 0;
}

int run_gradcheck(const ExperimentConfig& config, const std::string& out_path) {
    std::vector<double> rl_err(config.seeds), sl_err(config.seeds);
    parallel_for_ordered(config.seeds, [&](int job) {
        const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(job);
        std::mt19937_64 rng(substream(seed, 5));
        std::normal_distribution<double> gauss(0.0, 0.5);

        MdpFamilySpec rl_spec = config.mdp_spec();
        rl_spec.neural = false;
        const MetaRlTaskSet rl_set = generate_mdp_family(rl_spec, seed);
        Vec theta(rl_set.energy->dim());
        for (int k = 0; k < theta.size(); ++k) theta(k) = gauss(rng);
        const Vec analytic = meta_gradient_direct(rl_set, theta);
        const Vec numeric = finite_diff_gradient(
            [&](const Vec& t) { return meta_objective(rl_set, t); }, theta, 1e-6);
        rl_err[job] = (analytic - numeric).norm() / std::max(analytic.norm(), 1e-12);

        SlFamilySpec sl_spec = config.sl_spec();
        sl_spec.neural = false;
        const SlTaskSet sl_set = generate_sl_family(sl_spec, substream(seed, 19));
        Vec theta_sl(sl_set.model->dim());
        for (int k = 0; k < theta_sl.size(); ++k) theta_sl(k) = gauss(rng);
        const Vec analytic_sl = meta_gradient_sl(sl_set, theta_sl);
        const Vec numeric_sl = finite_diff_gradient(
            [&](const Vec& t) { return meta_objective_sl(sl_set, t); }, theta_sl, 1e-6);
        sl_err[job] = (analytic_sl - numeric_sl).norm() / std::max(analytic_sl.norm(), 1e-12);
    });

    CsvWriter csv({"seed", "rl_rel_error", "sl_rel_error"});
    double worst = 0.0;
    for (int job = 0; job < config.seeds; ++job) {
        worst = std::max({worst, rl_err[job], sl_err[job]});
        csv.add_row({static_cast<double>(config.seed + job), rl_err[job], sl_err[job]});
    }
    csv.write_atomic(out_path);
    std::printf("gradcheck: worst relative error %.3e over %d seeds\n", worst, config.seeds);
    return worst < 1e-4 ? 0 : 2;
}

}  // namespace

int run_experiment(const ExperimentConfig& config, const std::string& out_path) {
    config.validate();
    if (config.mode == "train-rl") return run_train_rl(config, out_path);
    if (config.mode == "train-sl") return run_train_sl(config, out_path);
    if (config.mode == "audit-rl") return run_audit_rl(config, out_path);
    if (config.mode == "audit-sl") return run_audit_sl(config, out_path);
    if (config.mode == "nn-linerr") return run_nn_linerr(config, out_path);
    return run_gradcheck(config, out_path);
}

int run_cli(int argc, char** argv) {
    CLI::App app{"metalab: exact meta-learning laboratory with optimality-gap audits"};
    app.require_subcommand(1);

    std::string config_path, out_path;
    std::int64_t seed_override = -1;
    const std::map<std::string, std::string> descriptions = {
        {"train-rl", "gradient ascent on the meta-RL objective"},
        {"train-sl", "gradient descent on the meta-SL objective"},
        {"audit-rl", "optimality-gap certificates for meta-RL stationary points"},
        {"audit-sl", "optimality-gap certificates for meta-SL stationary points"},
        {"nn-linerr", "linearization-error sweep over network widths"},
        {"gradcheck", "analytic gradients against finite differences"}};
    for (const std::string& mode : kModes) {
        CLI::App* sub = app.add_subcommand(mode, descriptions.at(mode));
        sub->add_option("--config", config_path, "experiment configuration JSON")->required();
        sub->add_option("--out", out_path, "output CSV path")->required();
        sub->add_option("--seed", seed_override, "override the configured base seed");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // help requests are not errors
    }

    try {
        ExperimentConfig config = ExperimentConfig::from_file(config_path);
        const std::string mode = app.get_subcommands().front()->get_name();
        if (config.mode.empty()) config.mode = mode;
        if (config.mode != mode)
            throw std::invalid_argument("config mode '" + config.mode +
                                        "' does not match subcommand '" + mode + "'");
        if (seed_override >= 0) config.seed = static_cast<std::uint64_t>(seed_override);
        return run_experiment(config, out_path);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace metalab
