#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "ivrl/estimators.hpp"
#include "ivrl/harness.hpp"
#include "ivrl/selftest.hpp"

using namespace ivrl;
using nlohmann::json;

namespace {

struct CommonFlags {
    std::string config_path;
    std::vector<std::string> sets;
};

RunConfig resolve_config(const CommonFlags& flags) {
    RunConfig cfg;
    std::string original;
    if (!flags.config_path.empty()) {
        std::ifstream f(flags.config_path);
        if (!f) throw std::invalid_argument("cannot open config " + flags.config_path);
        std::stringstream ss;
        ss << f.rdbuf();
        original = ss.str();
        cfg = parse_config_text(original, cfg);
    }
    for (const auto& kv : flags.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        apply_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

void save_policy_json(const SoftmaxPolicy& pi, const std::string& path) {
    json j;
    j["degree"] = pi.feature_map().degree();
    if (pi.feature_map().standardize()) {
        j["standardize"]["mean"] = pi.feature_map().standardize()->mean;
        j["standardize"]["sd"] = pi.feature_map().standardize()->sd;
    }
    for (Eigen::Index a = 0; a < pi.weights().rows(); ++a)
        for (Eigen::Index c = 0; c < pi.weights().cols(); ++c)
            j["weights"][static_cast<std::size_t>(a)][static_cast<std::size_t>(c)] =
                pi.weights()(a, c);
    std::ofstream f(path, std::ios::binary);
    f << j.dump(2) << "\n";
}

SoftmaxPolicy load_policy_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("cannot open policy " + path);
    json j;
    f >> j;
    const int degree = j.at("degree").get<int>();
    std::optional<FeatureMap::Standardize> std_opt;
    if (j.contains("standardize"))
        std_opt = FeatureMap::Standardize{j["standardize"]["mean"].get<double>(),
                                          j["standardize"]["sd"].get<double>()};
    const FeatureMap map(degree, std_opt);
    const auto& w = j.at("weights");
    Eigen::MatrixXd weights(w.size(), map.dim());
    for (std::size_t a = 0; a < w.size(); ++a)
        for (int c = 0; c < map.dim(); ++c)
            weights(static_cast<Eigen::Index>(a), c) = w[a][c].get<double>();
    return SoftmaxPolicy(map, weights);
}

int cmd_simulate(const RunConfig& cfg, const std::string& out_path, bool with_u) {
    Dataset data;
    if (cfg.env == "kidney") {
        KidneyEnv env;
        env.gamma = cfg.gamma;
        data = generate(env, cfg.n, cfg.t_len, cfg.seed, !with_u);
    } else if (cfg.env == "fixture") {
        data = generate(fixture_tabular(), cfg.n, cfg.t_len, cfg.seed, !with_u);
    } else if (cfg.env.rfind("tabular:", 0) == 0) {
        data = generate(load_tabular_json(cfg.env.substr(8)), cfg.n, cfg.t_len, cfg.seed, !with_u);
    } else if (cfg.env == "tabular-random") {
        RandomTabularSpec spec;
        spec.n_s = cfg.tab_n_s;
        spec.n_u = cfg.tab_n_u;
        spec.k = cfg.tab_k;
        spec.gamma = cfg.gamma;
        data = generate(random_tabular(spec, cfg.seed), cfg.n, cfg.t_len, cfg.seed, !with_u);
    } else {
        throw std::invalid_argument("unknown env '" + cfg.env + "'");
    }
    write_csv(data, out_path);
    std::printf("wrote %d trajectories x %d steps to %s\n", data.n(), data.t_len(),
                out_path.c_str());
    return 0;
}

int cmd_fit_nuisance(const RunConfig& cfg) {
    if (cfg.env != "kidney") throw std::invalid_argument("fit-nuisance currently targets kidney data");
    KidneyEnv env;
    env.gamma = cfg.gamma;
    const Dataset data = generate(env, cfg.n, cfg.t_len, cfg.seed);

    double mean = 0.0;
    long count = 0;
    for (const auto& tr : data.trajectories)
        for (const auto& st : tr) {
            mean += st.s;
            ++count;
        }
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (const auto& tr : data.trajectories)
        for (const auto& st : tr) var += (st.s - mean) * (st.s - mean);
    const FeatureMap map(cfg.degree,
                         cfg.standardize
                             ? std::optional<FeatureMap::Standardize>(FeatureMap::Standardize{
                                   mean, std::sqrt(var / static_cast<double>(count))})
                             : std::nullopt);
    const SimplexCode code(3);

    const LogitFit theta_fit = fit_theta(data, map);
    const LogitFit action_fit = fit_action_given_sz(data, map, code);
    const double radius = cfg.c_cfg * conf_radius_theta(map.dim(), cfg.n, cfg.t_len,
                                                        cfg.conf_delta, 1.0, cfg.theta_max);

    const std::string dir = make_run_dir(cfg.out_dir.empty() ? output_root() : cfg.out_dir,
                                         "fit-nuisance");
    json meta;
    meta["theta_loss"] = theta_fit.loss;
    meta["action_loss"] = action_fit.loss;
    meta["radius"] = radius;
    meta["c_cfg"] = cfg.c_cfg;
    meta["floors"] = {{"theta", cfg.floor_theta}, {"delta", cfg.floor_delta}};
    for (int r = 0; r < theta_fit.model.classes(); ++r)
        for (int c = 0; c < theta_fit.model.dim(); ++c)
            meta["theta_weights"][static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
                theta_fit.model.weights()(r, c);
    for (int r = 0; r < action_fit.model.classes(); ++r)
        for (int c = 0; c < action_fit.model.dim(); ++c)
            meta["action_weights"][static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
                action_fit.model.weights()(r, c);
    if (map.standardize()) {
        meta["standardize"]["mean"] = map.standardize()->mean;
        meta["standardize"]["sd"] = map.standardize()->sd;
    }
    std::ofstream f(dir + "/nuisance.json", std::ios::binary);
    f << meta.dump(2) << "\n";
    std::printf("theta loss %.6f, action loss %.6f, radius %.3e -> %s/nuisance.json\n",
                theta_fit.loss, action_fit.loss, radius, dir.c_str());
    return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& policy_path) {
    const SoftmaxPolicy pi = load_policy_json(policy_path);
    const double est = estimate_policy_value(cfg, cfg.method, cfg.seed, pi);
    std::printf("%s estimate: %.6f\n", cfg.method.c_str(), est);
    if (cfg.env == "kidney") {
        KidneyEnv env;
        env.gamma = cfg.gamma;
        const MonteCarloValue mc = true_j(env, pi, cfg.eval_rollouts,
                                          derive_seed(cfg.seed, {kStreamEval}), cfg.eval_horizon);
        std::printf("true value (Monte Carlo): %.6f (se %.6f, %d rollouts, horizon %d)\n", mc.mean,
                    mc.se, mc.rollouts, mc.horizon);
    } else {
        const auto env = cfg.env == "fixture" ? fixture_tabular()
                                              : load_tabular_json(cfg.env.substr(8));
        std::printf("true value (exact): %.6f\n", true_j(env, pi));
    }
    return 0;
}

int cmd_learn(const RunConfig& cfg) {
    const CellResult cell = run_method_cell(cfg, cfg.method, cfg.seed);
    const std::string dir =
        make_run_dir(cfg.out_dir.empty() ? output_root() : cfg.out_dir, "learn-" + cfg.method);
    write_trace_csv(dir + "/trace.csv", cell.learned.trace);
    save_policy_json(cell.learned.policy, dir + "/policy.json");
    write_config_snapshot(dir + "/config_snapshot.txt", "", cfg);
    std::printf("%s seed %llu: learned J %.6f (objective %.6f) -> %s\n", cfg.method.c_str(),
                static_cast<unsigned long long>(cfg.seed), cell.row.j_mean,
                cell.learned.pessimistic_j, dir.c_str());
    return 0;
}

int cmd_benchmark(const RunConfig& cfg, const std::vector<std::string>& methods,
                  const std::string& name) {
    const BenchmarkOutput out = run_benchmark(cfg, methods, name);
    std::printf("%-16s %10s %10s\n", "method", "mean", "ci");
    for (const auto& [m, iv] : out.intervals)
        std::printf("%-16s %10.4f [%.4f, %.4f]\n", m.c_str(), iv.mean, iv.lo, iv.hi);
    std::printf("artifacts in %s\n", out.run_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"instrumental-variable offline RL toolkit"};
    app.require_subcommand(1);

    CommonFlags flags;
    app.add_option("--config", flags.config_path, "key-path = value configuration file");
    app.add_option("--set", flags.sets, "override a config key, e.g. --set data.n=100");

    // simulate
    auto* sim = app.add_subcommand("simulate", "generate an offline dataset CSV");
    std::string env_name = "kidney", out_path = "dataset.csv";
    int n = 100, t_len = 50;
    std::uint64_t seed = 1;
    bool with_u = false;
    sim->add_option("--env", env_name, "kidney | fixture | tabular:<json> | tabular-random");
    sim->add_option("--n", n, "trajectory count");
    sim->add_option("--t", t_len, "horizon");
    sim->add_option("--seed", seed, "root seed");
    sim->add_option("--out", out_path, "output CSV path");
    sim->add_flag("--with-confounder", with_u, "include the hidden confounder column");

    // fit-nuisance
    auto* fitn = app.add_subcommand("fit-nuisance", "fit the instrument and action models");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "evaluate a stored policy");
    std::string policy_path;
    eval->add_option("--policy", policy_path, "policy JSON")->required();

    // learn
    auto* learn_cmd = app.add_subcommand("learn", "run one learner configuration");
    std::string method = "pess_IV";
    learn_cmd->add_option("--method", method, "estimator/learner variant");

    // benchmark
    auto* bench = app.add_subcommand("benchmark", "sweep methods x seeds");
    std::vector<std::string> bench_methods;
    bench->add_option("--methods", bench_methods, "subset of methods (default: all)");

    // reproduce-figure
    auto* fig = app.add_subcommand("reproduce-figure",
                                   "kidney benchmark with the four headline methods");
    int fig_n = 200, fig_t = 100, fig_seeds = 5;
    fig->add_option("--n", fig_n, "trajectories per seed");
    fig->add_option("--t", fig_t, "horizon");
    fig->add_option("--seeds", fig_seeds, "seed count");

    // selftest
    auto* self = app.add_subcommand("selftest", "run the full verification suite");
    bool skip_slow = false;
    self->add_flag("--skip-slow", skip_slow, "skip the two benchmark-scale checks");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) {
            RunConfig cfg = resolve_config(flags);
            cfg.env = env_name;
            cfg.n = n;
            cfg.t_len = t_len;
            cfg.seed = seed;
            return cmd_simulate(cfg, out_path, with_u);
        }
        if (fitn->parsed()) return cmd_fit_nuisance(resolve_config(flags));
        if (eval->parsed()) return cmd_evaluate(resolve_config(flags), policy_path);
        if (learn_cmd->parsed()) {
            RunConfig cfg = resolve_config(flags);
            cfg.method = method;
            return cmd_learn(cfg);
        }
        if (bench->parsed()) {
            const RunConfig cfg = resolve_config(flags);
            return cmd_benchmark(cfg, bench_methods.empty() ? kAllMethods : bench_methods,
                                 "benchmark");
        }
        if (fig->parsed()) {
            RunConfig cfg = resolve_config(flags);
            cfg.env = "kidney";
            cfg.n = fig_n;
            cfg.t_len = fig_t;
            cfg.n_seeds = fig_seeds;
            return cmd_benchmark(cfg, kFigureMethods, "figure");
        }
        if (self->parsed()) {
            selftest::Options opt;
            opt.skip_slow = skip_slow;
            const RunConfig cfg = resolve_config(flags);
            if (!cfg.out_dir.empty()) opt.scratch_dir = cfg.out_dir;
            const int failures = selftest::report(selftest::run_all(opt));
            return failures == 0 ? 0 : 1;
        }
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
