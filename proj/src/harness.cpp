#include "ivrl/harness.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace ivrl {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw std::invalid_argument("config: expected boolean, got '" + v + "'");
}

std::string fmt17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::string fmt_num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", x);
    return buf;
}

}  // namespace

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto as_int = [&] { return std::stoi(value); };
    auto as_dbl = [&] { return std::stod(value); };
    auto as_u64 = [&] { return static_cast<std::uint64_t>(std::stoull(value)); };

    if (key == "env") cfg.env = value;
    else if (key == "env.tab_n_s") cfg.tab_n_s = as_int();
    else if (key == "env.tab_n_u") cfg.tab_n_u = as_int();
    else if (key == "env.tab_k") cfg.tab_k = as_int();
    else if (key == "env.gamma") cfg.gamma = as_dbl();
    else if (key == "data.n") cfg.n = as_int();
    else if (key == "data.t") cfg.t_len = as_int();
    else if (key == "data.seed") cfg.seed = as_u64();
    else if (key == "features.degree") cfg.degree = as_int();
    else if (key == "features.standardize") cfg.standardize = parse_bool(value);
    else if (key == "nuisance.source") cfg.nuisance = value;
    else if (key == "nuisance.c_cfg") cfg.c_cfg = as_dbl();
    else if (key == "nuisance.n_cand") cfg.n_cand = as_int();
    else if (key == "nuisance.delta") cfg.conf_delta = as_dbl();
    else if (key == "nuisance.floor_theta") cfg.floor_theta = as_dbl();
    else if (key == "nuisance.floor_delta") cfg.floor_delta = as_dbl();
    else if (key == "nuisance.theta_max") cfg.theta_max = as_dbl();
    else if (key == "learner.method") cfg.method = value;
    else if (key == "learner.alpha_vf") cfg.alpha_vf = as_dbl();
    else if (key == "learner.alpha_mis") cfg.alpha_mis = as_dbl();
    else if (key == "learner.n_noise") cfg.n_noise = as_int();
    else if (key == "learner.noise_sd") cfg.noise_sd = as_dbl();
    else if (key == "learner.w_box") cfg.w_box = as_dbl();
    else if (key == "learner.zo_iterations") cfg.zo_iterations = as_int();
    else if (key == "learner.zo_perturbations") cfg.zo_perturbations = as_int();
    else if (key == "learner.zo_smoothing") cfg.zo_smoothing = as_dbl();
    else if (key == "learner.zo_step0") cfg.zo_step0 = as_dbl();
    else if (key == "eval.rollouts") cfg.eval_rollouts = as_int();
    else if (key == "eval.horizon") cfg.eval_horizon = as_int();
    else if (key == "benchmark.n_seeds") cfg.n_seeds = as_int();
    else if (key == "benchmark.threads") cfg.threads = as_int();
    else if (key == "benchmark.deterministic_runtime") cfg.deterministic_runtime = parse_bool(value);
    else if (key == "output.svg") cfg.svg = parse_bool(value);
    else if (key == "output.dir") cfg.out_dir = value;
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::map<std::string, std::string> RunConfig::as_map() const {
    std::map<std::string, std::string> m;
    m["env"] = env;
    m["env.tab_n_s"] = std::to_string(tab_n_s);
    m["env.tab_n_u"] = std::to_string(tab_n_u);
    m["env.tab_k"] = std::to_string(tab_k);
    m["env.gamma"] = fmt_num(gamma);
    m["data.n"] = std::to_string(n);
    m["data.t"] = std::to_string(t_len);
    m["data.seed"] = std::to_string(seed);
    m["features.degree"] = std::to_string(degree);
    m["features.standardize"] = standardize ? "true" : "false";
    m["nuisance.source"] = nuisance;
    m["nuisance.c_cfg"] = fmt_num(c_cfg);
    m["nuisance.n_cand"] = std::to_string(n_cand);
    m["nuisance.delta"] = fmt_num(conf_delta);
    m["nuisance.floor_theta"] = fmt_num(floor_theta);
    m["nuisance.floor_delta"] = fmt_num(floor_delta);
    m["nuisance.theta_max"] = fmt_num(theta_max);
    m["learner.method"] = method;
    m["learner.alpha_vf"] = fmt_num(alpha_vf);
    m["learner.alpha_mis"] = fmt_num(alpha_mis);
    m["learner.n_noise"] = std::to_string(n_noise);
    m["learner.noise_sd"] = fmt_num(noise_sd);
    m["learner.w_box"] = fmt_num(w_box);
    m["learner.zo_iterations"] = std::to_string(zo_iterations);
    m["learner.zo_perturbations"] = std::to_string(zo_perturbations);
    m["learner.zo_smoothing"] = fmt_num(zo_smoothing);
    m["learner.zo_step0"] = fmt_num(zo_step0);
    m["eval.rollouts"] = std::to_string(eval_rollouts);
    m["eval.horizon"] = std::to_string(eval_horizon);
    m["benchmark.n_seeds"] = std::to_string(n_seeds);
    m["benchmark.threads"] = std::to_string(threads);
    m["benchmark.deterministic_runtime"] = deterministic_runtime ? "true" : "false";
    m["output.svg"] = svg ? "true" : "false";
    m["output.dir"] = out_dir;
    return m;
}

RunConfig parse_config_text(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string line, section;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: expected key = value, got '" + line + "'");
        std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!section.empty()) key = section + "." + key;
        apply_key(base, key, value);
    }
    return base;
}

RunConfig parse_config_file(const std::string& path, RunConfig base) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str(), base);
}

Interval confidence_interval(const std::vector<double>& values, double level) {
    const auto n = values.size();
    if (n < 2) throw std::invalid_argument("confidence_interval: need at least two seeds");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));

    const boost::math::students_t dist(static_cast<double>(n - 1));
    const double tq = boost::math::quantile(dist, 0.5 + level / 2.0);
    const double half = tq * sd / std::sqrt(static_cast<double>(n));
    return Interval{mean, mean - half, mean + half};
}

namespace {

struct EnvBundle {
    bool kidney = false;
    KidneyEnv kid;
    TabularConfoundedMDP tab;
    double gamma() const { return kidney ? kid.gamma : tab.gamma; }
    int k() const { return kidney ? KidneyEnv::kActions : tab.k; }
};

EnvBundle make_env(const RunConfig& cfg) {
    EnvBundle e;
    if (cfg.env == "kidney") {
        e.kidney = true;
        e.kid.gamma = cfg.gamma;
        return e;
    }
    if (cfg.env == "fixture") {
        e.tab = fixture_tabular();
        return e;
    }
    if (cfg.env == "tabular-random") {
        RandomTabularSpec spec;
        spec.n_s = cfg.tab_n_s;
        spec.n_u = cfg.tab_n_u;
        spec.k = cfg.tab_k;
        spec.gamma = cfg.gamma;
        e.tab = random_tabular(spec, cfg.seed);
        return e;
    }
    if (cfg.env.rfind("tabular:", 0) == 0) {
        e.tab = load_tabular_json(cfg.env.substr(8));
        return e;
    }
    throw std::invalid_argument("config: unknown env '" + cfg.env + "'");
}

FeatureMap make_feature_map(const RunConfig& cfg, const EnvBundle& env, const Dataset& data) {
    if (!env.kidney || !cfg.standardize) return FeatureMap(cfg.degree);
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
    var /= static_cast<double>(count);
    const double sd = std::sqrt(std::max(var, 1e-12));
    return FeatureMap(cfg.degree, FeatureMap::Standardize{mean, sd});
}

struct MethodSpec {
    PessimismMode mode;
    ObjectiveKind kind;
    WeightMode weights;
};

MethodSpec method_spec(const std::string& method) {
    if (method == "pess_IV") return {PessimismMode::NoiseReplicate, ObjectiveKind::Vf, WeightMode::Iv};
    if (method == "no_pess_IV") return {PessimismMode::None, ObjectiveKind::Vf, WeightMode::Iv};
    if (method == "pess_no_IV")
        return {PessimismMode::NoiseReplicate, ObjectiveKind::Vf, WeightMode::Naive};
    if (method == "no_pess_no_IV")
        return {PessimismMode::None, ObjectiveKind::Vf, WeightMode::Naive};
    if (method == "vf_dual") return {PessimismMode::ConstrainedDual, ObjectiveKind::Vf, WeightMode::Iv};
    if (method == "mis_dual")
        return {PessimismMode::ConstrainedDual, ObjectiveKind::Mis, WeightMode::Iv};
    if (method == "dr_dual") return {PessimismMode::ConstrainedDual, ObjectiveKind::Dr, WeightMode::Iv};
    throw std::invalid_argument("unknown method '" + method + "'");
}

}  // namespace

namespace {

// everything a method cell needs before the policy search starts
struct CellSetup {
    EnvBundle env;
    FeatureMap map{0};
    LearnerContext ctx;
    PessimismConfig pcfg;
    ZeroOrderConfig zcfg;
};

CellSetup make_cell_setup(const RunConfig& cfg, const std::string& method, std::uint64_t seed) {
    const EnvBundle env = make_env(cfg);
    const MethodSpec spec = method_spec(method);

    Dataset data = env.kidney ? generate(env.kid, cfg.n, cfg.t_len, seed)
                              : generate(env.tab, cfg.n, cfg.t_len, seed);
    const FeatureMap map = make_feature_map(cfg, env, data);
    const SimplexCode code(env.k());

    // nuisance candidates -> one cache each
    std::vector<SampleCache> caches;
    if (cfg.nuisance == "oracle") {
        if (env.kidney) {
            caches.push_back(build_cache(data, map, code, OracleKidneyNuisance(env.kid)));
        } else {
            caches.push_back(build_cache(data, map, code, OracleTabularNuisance(env.tab)));
        }
    } else if (cfg.nuisance == "fitted" || cfg.nuisance == "fitted-conf-set") {
        LogitFitConfig lcfg;
        const LogitFit theta_fit = fit_theta(data, map, lcfg);
        const LogitFit action_fit = fit_action_given_sz(data, map, code, lcfg);
        FittedNuisanceConfig ncfg{cfg.floor_theta, cfg.floor_delta};
        caches.push_back(build_cache(
            data, map, code, FittedNuisance(map, code, theta_fit.model, action_fit.model, ncfg)));

        if (cfg.nuisance == "fitted-conf-set") {
            // paired candidates drawn from the two loss-gap sets
            std::vector<int> ys_theta, ys_action;
            Eigen::MatrixXd xs_theta(static_cast<Eigen::Index>(cfg.n) * cfg.t_len, map.dim());
            Eigen::MatrixXd xs_action(static_cast<Eigen::Index>(cfg.n) * cfg.t_len,
                                      map.dim() + env.k() - 1);
            Eigen::Index row = 0;
            for (const auto& tr : data.trajectories)
                for (const auto& st : tr) {
                    xs_theta.row(row) = map.eval(st.s).transpose();
                    xs_action.row(row).head(map.dim()) = map.eval(st.s).transpose();
                    xs_action.row(row).tail(env.k() - 1) = code.vector(st.z).transpose();
                    ys_theta.push_back(st.z);
                    ys_action.push_back(st.a);
                    ++row;
                }
            const double radius = cfg.c_cfg * conf_radius_theta(map.dim(), cfg.n, cfg.t_len,
                                                                cfg.conf_delta, 1.0, cfg.theta_max);
            auto theta_loss = [&](const MultinomialLogit& m) {
                return logit_loss(m, xs_theta, ys_theta, lcfg.ridge);
            };
            auto action_loss = [&](const MultinomialLogit& m) {
                return logit_loss(m, xs_action, ys_action, lcfg.ridge);
            };
            const ConfidenceSet set_theta = build_conf_set(
                theta_fit.model, theta_loss, radius, cfg.n_cand, derive_seed(seed, {71}));
            const ConfidenceSet set_action = build_conf_set(
                action_fit.model, action_loss, radius, cfg.n_cand, derive_seed(seed, {72}));
            const std::size_t pairs =
                std::min(set_theta.candidates.size(), set_action.candidates.size());
            for (std::size_t i = 1; i < pairs; ++i) {
                FittedNuisance cand(map, code, set_theta.candidates[i], set_action.candidates[i],
                                    ncfg);
                caches.push_back(build_cache(data, map, code, cand));
            }
        }
    } else {
        throw std::invalid_argument("config: unknown nuisance source '" + cfg.nuisance + "'");
    }

    // naive propensity for the no-IV pipeline
    if (spec.weights == WeightMode::Naive) {
        PropensityFn prop;
        if (cfg.nuisance == "oracle") {
            if (env.kidney) {
                const KidneyEnv kid = env.kid;
                prop = [kid](double s, int a) { return kid.propensity(s)[a]; };
            } else {
                const Eigen::MatrixXd table = env.tab.marginal_propensity();
                prop = [table](double s, int a) {
                    return table(static_cast<Eigen::Index>(std::llround(s)), a);
                };
            }
        } else {
            // multinomial logit of A on psi(S)
            std::vector<int> ys;
            Eigen::MatrixXd xs(static_cast<Eigen::Index>(cfg.n) * cfg.t_len, map.dim());
            Eigen::Index row = 0;
            for (const auto& tr : data.trajectories)
                for (const auto& st : tr) {
                    xs.row(row++) = map.eval(st.s).transpose();
                    ys.push_back(st.a);
                }
            const LogitFit fit = fit_logit(xs, ys, env.k());
            const MultinomialLogit model = fit.model;
            const FeatureMap pmap = map;
            prop = [model, pmap](double s, int a) {
                return std::max(model.probs(pmap.eval(s))[a], 1e-3);
            };
        }
        for (auto& cache : caches) attach_propensity(cache, prop);
    }

    // reference-measure features
    Eigen::VectorXd qnu;
    if (env.kidney) {
        qnu = (1.0 - env.gamma()) * nu_feature_mean(map, env.kid.nu_sample());
    } else {
        std::vector<double> states;
        std::vector<double> weights;
        for (int s = 0; s < env.tab.n_s; ++s) {
            states.push_back(static_cast<double>(s));
            weights.push_back(env.tab.nu[s]);
        }
        qnu = (1.0 - env.gamma()) * nu_feature_mean(map, states, weights);
    }

    LearnerContext ctx = make_context(std::move(caches), qnu, env.gamma());
    if (spec.mode == PessimismMode::NoiseReplicate)
        prepare_noise(ctx, cfg.n_noise, cfg.noise_sd, derive_seed(seed, {kStreamNoise}));

    PessimismConfig pcfg;
    pcfg.mode = spec.mode;
    pcfg.kind = spec.kind;
    pcfg.weights = spec.weights;
    pcfg.n_noise = cfg.n_noise;
    pcfg.noise_sd = cfg.noise_sd;
    pcfg.w_box = cfg.w_box;

    if (spec.mode == PessimismMode::ConstrainedDual) {
        // bootstrap the radii at the initial policy unless pinned
        const SoftmaxPolicy pi0 = SoftmaxPolicy::uniform(map, env.k());
        if (cfg.alpha_vf >= 0.0) {
            pcfg.alpha_vf = cfg.alpha_vf;
        } else {
            const VfSystem sys = build_vf_system(ctx.primary(), pi0, env.gamma(), spec.weights);
            const MinMaxFit fit = fit_v_hat(sys);
            const Eigen::MatrixXd parts =
                vf_residual_parts(ctx.primary(), pi0, env.gamma(), spec.weights, fit.coef);
            pcfg.alpha_vf = calibrate_alpha(parts, cfg.conf_delta, 200,
                                            derive_seed(seed, {kStreamCalibration, 11}), cfg.c_cfg);
        }
        if (cfg.alpha_mis >= 0.0) {
            pcfg.alpha_mis = cfg.alpha_mis;
        } else {
            const MisSystem sys =
                build_mis_system(ctx.primary(), pi0, env.gamma(), spec.weights, ctx.qnu);
            const MinMaxFit fit = fit_w_hat(sys, MinMaxConfig{cfg.w_box});
            const Eigen::MatrixXd parts =
                mis_residual_parts(ctx.primary(), pi0, env.gamma(), spec.weights, fit.coef);
            pcfg.alpha_mis = calibrate_alpha(parts, cfg.conf_delta, 200,
                                             derive_seed(seed, {kStreamCalibration, 12}), cfg.c_cfg);
        }
    }

    ZeroOrderConfig zcfg;
    zcfg.iterations = cfg.zo_iterations;
    zcfg.perturbations = cfg.zo_perturbations;
    zcfg.smoothing = cfg.zo_smoothing;
    zcfg.step0 = cfg.zo_step0;

    return CellSetup{env, map, std::move(ctx), pcfg, zcfg};
}

}  // namespace

CellResult run_method_cell(const RunConfig& cfg, const std::string& method, std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    CellSetup setup = make_cell_setup(cfg, method, seed);

    const ObjectiveFn objective = make_objective(setup.ctx, setup.pcfg);
    LearnResult learned =
        learn(objective, setup.map, setup.env.k(), setup.zcfg, seed, method);

    CellResult out{ResultRow{method, seed, 0.0, 0.0, 0.0}, std::move(learned)};
    if (setup.env.kidney) {
        const MonteCarloValue mc = true_j(setup.env.kid, out.learned.policy, cfg.eval_rollouts,
                                          derive_seed(seed, {kStreamEval}), cfg.eval_horizon);
        out.row.j_mean = mc.mean;
        out.row.j_se = mc.se;
    } else {
        out.row.j_mean = true_j(setup.env.tab, out.learned.policy);
        out.row.j_se = 0.0;
    }
    out.row.runtime_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

double estimate_policy_value(const RunConfig& cfg, const std::string& method, std::uint64_t seed,
                             const Policy& pi) {
    const CellSetup setup = make_cell_setup(cfg, method, seed);
    switch (setup.pcfg.mode) {
        case PessimismMode::None:
            return plain_value(setup.ctx, pi, setup.pcfg);
        case PessimismMode::NoiseReplicate:
            return noise_replicate_pessimism(setup.ctx, pi, setup.pcfg);
        case PessimismMode::ConstrainedDual:
            switch (setup.pcfg.kind) {
                case ObjectiveKind::Vf:
                    return pessimistic_j_vf(setup.ctx, pi, setup.pcfg);
                case ObjectiveKind::Mis:
                    return pessimistic_j_mis(setup.ctx, pi, setup.pcfg);
                case ObjectiveKind::Dr:
                    return pessimistic_j_dr(setup.ctx, pi, setup.pcfg);
            }
    }
    throw std::logic_error("estimate_policy_value: unknown mode");
}

ResultRow behavior_cell(const RunConfig& cfg, std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const EnvBundle env = make_env(cfg);
    ResultRow row{"behavior", seed, 0.0, 0.0, 0.0};
    if (env.kidney) {
        const MonteCarloValue mc = behavior_j(env.kid, cfg.eval_rollouts,
                                              derive_seed(seed, {kStreamEval}), cfg.eval_horizon);
        row.j_mean = mc.mean;
        row.j_se = mc.se;
    } else {
        // exact value of the logging process
        const Eigen::MatrixXd pb = env.tab.behavior_state_kernel();
        Eigen::VectorXd rb = Eigen::VectorXd::Zero(env.tab.n_s);
        for (int s = 0; s < env.tab.n_s; ++s)
            for (int z = 0; z < env.tab.k; ++z)
                for (int u = 0; u < env.tab.n_u; ++u)
                    for (int a = 0; a < env.tab.k; ++a)
                        rb[s] += env.tab.theta(s, z) * env.tab.p_u(s, u) *
                                 env.tab.b_at(s, u, z, a) * env.tab.r_at(s, u, a);
        const Eigen::MatrixXd sys =
            Eigen::MatrixXd::Identity(env.tab.n_s, env.tab.n_s) - env.tab.gamma * pb;
        const Eigen::VectorXd vb = sys.partialPivLu().solve(rb);
        row.j_mean = (1.0 - env.tab.gamma) * env.tab.zeta.dot(vb);
    }
    row.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return row;
}

std::string output_root() {
    if (const char* env = std::getenv("IVRL_OUT_ROOT"); env != nullptr && *env != '\0')
        return env;
    return "runs";
}

std::string make_run_dir(const std::string& root, const std::string& name) {
    namespace fs = std::filesystem;
    fs::create_directories(root);
    std::string dir = root + "/" + name;
    int suffix = 1;
    while (fs::exists(dir)) dir = root + "/" + name + "-" + std::to_string(++suffix);
    fs::create_directories(dir);
    return dir;
}

void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows,
                       bool deterministic_runtime) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "method,seed,j_mean,j_se,runtime_s\n";
    for (const auto& r : rows)
        f << r.method << ',' << r.seed << ',' << fmt17(r.j_mean) << ',' << fmt17(r.j_se) << ','
          << (deterministic_runtime ? std::string("0") : fmt17(r.runtime_s)) << "\n";
}

void write_timings_csv(const std::string& path, const std::vector<ResultRow>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "method,seed,runtime_s\n";
    for (const auto& r : rows) f << r.method << ',' << r.seed << ',' << fmt17(r.runtime_s) << "\n";
}

void write_plot_data_csv(const std::string& path,
                         const std::map<std::string, Interval>& intervals) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "method,mean,ci_lo,ci_hi\n";
    for (const auto& [method, iv] : intervals)
        f << method << ',' << fmt17(iv.mean) << ',' << fmt17(iv.lo) << ',' << fmt17(iv.hi) << "\n";
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "iter,objective,grad_norm,param_hash\n";
    char hex[24];
    for (const auto& t : trace) {
        std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(t.param_hash));
        f << t.iter << ',' << fmt17(t.objective) << ',' << fmt17(t.grad_norm) << ',' << hex << "\n";
    }
}

void write_svg_chart(const std::string& path, const std::map<std::string, Interval>& intervals) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    const int w = 640, h = 400, margin = 60;
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (const auto& [m, iv] : intervals) {
        lo = first ? iv.lo : std::min(lo, iv.lo);
        hi = first ? iv.hi : std::max(hi, iv.hi);
        first = false;
    }
    const double pad = 0.1 * std::max(1e-9, hi - lo);
    lo -= pad;
    hi += pad;
    auto ypix = [&](double v) { return h - margin - (v - lo) / (hi - lo) * (h - 2 * margin); };

    f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
    f << "<rect width='100%' height='100%' fill='white'/>\n";
    const int nm = static_cast<int>(intervals.size());
    const double slot = static_cast<double>(w - 2 * margin) / std::max(1, nm);
    int i = 0;
    for (const auto& [m, iv] : intervals) {
        const double x = margin + slot * (i + 0.5);
        f << "<line x1='" << x << "' y1='" << ypix(iv.lo) << "' x2='" << x << "' y2='"
          << ypix(iv.hi) << "' stroke='steelblue' stroke-width='3'/>\n";
        f << "<circle cx='" << x << "' cy='" << ypix(iv.mean) << "' r='5' fill='crimson'/>\n";
        f << "<text x='" << x << "' y='" << h - margin / 2.0
          << "' text-anchor='middle' font-size='12'>" << m << "</text>\n";
        ++i;
    }
    f << "<text x='" << margin / 3.0 << "' y='" << ypix(hi - pad)
      << "' font-size='12' text-anchor='start'>" << fmt_num(hi - pad) << "</text>\n";
    f << "<text x='" << margin / 3.0 << "' y='" << ypix(lo + pad)
      << "' font-size='12' text-anchor='start'>" << fmt_num(lo + pad) << "</text>\n";
    f << "</svg>\n";
}

void write_config_snapshot(const std::string& path, const std::string& original_text,
                           const RunConfig& cfg) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "# original\n" << original_text << "\n# resolved\n";
    for (const auto& [k, v] : cfg.as_map()) f << k << " = " << v << "\n";
}

BenchmarkOutput run_benchmark(const RunConfig& cfg, const std::vector<std::string>& methods,
                              const std::string& run_name) {
    BenchmarkOutput out;
    const std::string dir =
        cfg.out_dir.empty() ? make_run_dir(output_root(), run_name) : make_run_dir(cfg.out_dir, run_name);
    out.run_dir = dir;

    struct Cell {
        std::string method;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (const auto& m : methods)
        for (int s = 1; s <= cfg.n_seeds; ++s)
            cells.push_back({m, static_cast<std::uint64_t>(s)});

    std::vector<std::unique_ptr<CellResult>> results(cells.size());
    const int threads = std::max(1, cfg.threads);
    for (std::size_t base = 0; base < cells.size(); base += static_cast<std::size_t>(threads)) {
        const std::size_t chunk = std::min(cells.size() - base, static_cast<std::size_t>(threads));
        std::vector<std::future<CellResult>> futs;
        for (std::size_t j = 0; j < chunk; ++j) {
            const Cell& c = cells[base + j];
            futs.push_back(std::async(std::launch::async, [&cfg, c] {
                return run_method_cell(cfg, c.method, c.seed);
            }));
        }
        for (std::size_t j = 0; j < chunk; ++j)
            results[base + j] = std::make_unique<CellResult>(futs[j].get());
    }

    for (auto& r : results) out.rows.push_back(r->row);
    for (int s = 1; s <= cfg.n_seeds; ++s)
        out.rows.push_back(behavior_cell(cfg, static_cast<std::uint64_t>(s)));

    std::map<std::string, std::vector<double>> by_method;
    for (const auto& r : out.rows) by_method[r.method].push_back(r.j_mean);
    if (cfg.n_seeds >= 2)
        for (const auto& [m, vals] : by_method) out.intervals[m] = confidence_interval(vals);

    write_results_csv(dir + "/results.csv", out.rows, cfg.deterministic_runtime);
    write_timings_csv(dir + "/timings.csv", out.rows);
    if (!out.intervals.empty()) write_plot_data_csv(dir + "/plot_data.csv", out.intervals);
    if (cfg.svg && !out.intervals.empty()) write_svg_chart(dir + "/plot.svg", out.intervals);
    for (const auto& r : results)
        write_trace_csv(dir + "/trace_" + r->row.method + "_" + std::to_string(r->row.seed) +
                            ".csv",
                        r->learned.trace);

    // machine-readable run record
    json meta;
    meta["config"] = cfg.as_map();
    meta["methods"] = methods;
    json rows = json::array();
    for (const auto& r : out.rows)
        rows.push_back({{"method", r.method},
                        {"seed", r.seed},
                        {"j_mean", r.j_mean},
                        {"j_se", r.j_se}});
    meta["rows"] = rows;
    std::ofstream mf(dir + "/metadata.json", std::ios::binary);
    mf << meta.dump(2) << "\n";

    return out;
}

TabularConfoundedMDP load_tabular_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_tabular_json: cannot open " + path);
    json j;
    f >> j;

    TabularConfoundedMDP env;
    env.n_s = j.at("n_s").get<int>();
    env.n_u = j.at("n_u").get<int>();
    env.k = j.at("k").get<int>();
    env.gamma = j.at("gamma").get<double>();
    env.allocate();

    for (int s = 0; s < env.n_s; ++s) {
        for (int u = 0; u < env.n_u; ++u) env.p_u(s, u) = j.at("p_u")[s][u].get<double>();
        for (int z = 0; z < env.k; ++z) env.theta(s, z) = j.at("theta")[s][z].get<double>();
        env.zeta[s] = j.at("zeta")[s].get<double>();
        env.nu[s] = j.at("nu")[s].get<double>();
        for (int u = 0; u < env.n_u; ++u) {
            for (int z = 0; z < env.k; ++z)
                for (int a = 0; a < env.k; ++a)
                    env.b_at(s, u, z, a) = j.at("behavior")[s][u][z][a].get<double>();
            for (int a = 0; a < env.k; ++a) {
                env.r_at(s, u, a) = j.at("reward")[s][u][a].get<double>();
                for (int sn = 0; sn < env.n_s; ++sn)
                    env.p_at(s, u, a, sn) = j.at("trans")[s][u][a][sn].get<double>();
            }
        }
    }
    env.validate();
    return env;
}

void save_tabular_json(const TabularConfoundedMDP& env, const std::string& path) {
    json j;
    j["n_s"] = env.n_s;
    j["n_u"] = env.n_u;
    j["k"] = env.k;
    j["gamma"] = env.gamma;
    for (int s = 0; s < env.n_s; ++s) {
        for (int u = 0; u < env.n_u; ++u) j["p_u"][s][u] = env.p_u(s, u);
        for (int z = 0; z < env.k; ++z) j["theta"][s][z] = env.theta(s, z);
        j["zeta"][s] = env.zeta[s];
        j["nu"][s] = env.nu[s];
        for (int u = 0; u < env.n_u; ++u) {
            for (int z = 0; z < env.k; ++z)
                for (int a = 0; a < env.k; ++a) j["behavior"][s][u][z][a] = env.b_at(s, u, z, a);
            for (int a = 0; a < env.k; ++a) {
                j["reward"][s][u][a] = env.r_at(s, u, a);
                for (int sn = 0; sn < env.n_s; ++sn) j["trans"][s][u][a][sn] = env.p_at(s, u, a, sn);
            }
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_tabular_json: cannot open " + path);
    f << j.dump(2) << "\n";
}

}  // namespace ivrl
