#include "ivrl/selftest.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ivrl/estimators.hpp"
#include "ivrl/rng.hpp"
#include "ivrl/simplex.hpp"

namespace ivrl::selftest {

namespace {

using Clock = std::chrono::steady_clock;

struct Timer {
    Clock::time_point t0 = Clock::now();
    double elapsed() const { return std::chrono::duration<double>(Clock::now() - t0).count(); }
};

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3g", x);
    return buf;
}

TabularPolicy fixture_policy() {
    Eigen::MatrixXd p(3, 3);
    p << 0.6, 0.3, 0.1, 0.2, 0.2, 0.6, 0.1, 0.8, 0.1;
    return TabularPolicy(p);
}

Eigen::VectorXd fixture_qnu(const TabularConfoundedMDP& env, const FeatureMap& map) {
    std::vector<double> states, weights;
    for (int s = 0; s < env.n_s; ++s) {
        states.push_back(static_cast<double>(s));
        weights.push_back(env.nu[s]);
    }
    return (1.0 - env.gamma) * nu_feature_mean(map, states, weights);
}

Eigen::VectorXd interpolate_coef(const FeatureMap& map, const Eigen::VectorXd& values) {
    const int n = static_cast<int>(values.size());
    Eigen::MatrixXd vand(n, map.dim());
    for (int s = 0; s < n; ++s) vand.row(s) = map.eval(s).transpose();
    return vand.completeOrthogonalDecomposition().solve(values);
}

double slope_loglog(const std::vector<double>& xs, const std::vector<double>& ys) {
    const int n = static_cast<int>(xs.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (int i = 0; i < n; ++i) {
        const double lx = std::log(xs[static_cast<std::size_t>(i)]);
        const double ly = std::log(ys[static_cast<std::size_t>(i)]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

CriterionResult simplex_identities() {
    Timer timer;
    CriterionResult res{1, "simplex-code algebra (K = 2..8)", true, "", 0.0};
    double worst = 0.0;
    for (int k = 2; k <= 8; ++k) {
        const SimplexCode code(k);
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(k - 1);
        for (int j = 0; j < k; ++j) sum += code.vector(j);
        worst = std::max(worst, sum.lpNorm<Eigen::Infinity>());
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
                const double expect = i == j ? 1.0 : -1.0 / (k - 1);
                worst = std::max(worst, std::abs(code.vector(i).dot(code.vector(j)) - expect));
            }
    }
    res.passed = worst <= 1e-12;
    res.detail = "max identity violation " + fmt(worst);
    res.seconds = timer.elapsed();
    return res;
}

CriterionResult identification_suite() {
    Timer timer;
    CriterionResult res{2, "population identification identities", true, "", 0.0};

    const TabularConfoundedMDP env = fixture_tabular();
    const TabularPolicy pi = fixture_policy();
    const FeatureMap map(4);
    const OracleTabularNuisance oracle(env);
    const int t_len = 8;
    const PopulationEvaluator pop(env, t_len);

    const Eigen::VectorXd v_exact = exact_value(env, pi);
    const Eigen::VectorXd w_exact = exact_ratio(env, pi, t_len);
    const double j_true = true_j(env, pi);

    auto v_fn = [&v_exact](double s) { return v_exact[static_cast<int>(std::llround(s))]; };
    auto w_fn = [&w_exact](double s) { return w_exact[static_cast<int>(std::llround(s))]; };

    double worst = 0.0;
    for (int j = 0; j < map.dim(); ++j) {
        auto basis = [&map, j](double s) { return map.eval(s)[j]; };
        worst = std::max(worst, std::abs(pop.phi_vf(pi, v_fn, basis, oracle)));
        worst = std::max(worst, std::abs(pop.phi_mis(pi, w_fn, basis, oracle)));
    }
    worst = std::max(worst, std::abs(pop.l_mis(pi, w_fn, oracle) - j_true));

    Rng rng(424242);
    for (int rep = 0; rep < 10; ++rep) {
        Eigen::VectorXd wc(map.dim()), vc(map.dim());
        for (int i = 0; i < map.dim(); ++i) {
            wc[i] = rng.uniform(-1.0, 1.0);
            vc[i] = rng.normal(0.0, 1.0);
        }
        auto w_arb = [&map, wc](double s) { return map.eval(s).dot(wc); };
        auto v_arb = [&map, vc](double s) { return map.eval(s).dot(vc); };
        worst = std::max(worst, std::abs(pop.l_dr(pi, w_fn, v_arb, oracle) - j_true));
        worst = std::max(worst, std::abs(pop.l_dr(pi, w_arb, v_fn, oracle) - j_true));
    }

    res.passed = worst <= 1e-10;
    res.detail = "max identity residual " + fmt(worst);
    res.seconds = timer.elapsed();
    return res;
}

CriterionResult kidney_compliance() {
    Timer timer;
    CriterionResult res{3, "kidney compliance constant 0.70", true, "", 0.0};
    const KidneyEnv env;
    double worst = 0.0;
    for (int a = 0; a < 3; ++a) {
        for (double u : {env.u_mean - 1.0, env.u_mean + 1.0}) {
            double off = 0.0;
            for (int z = 0; z < 3; ++z)
                if (z != a) off += env.behavior_row(u, z)[a];
            worst = std::max(worst, std::abs(env.behavior_row(u, a)[a] - off / 2.0 - 0.70));
        }
        worst = std::max(worst, std::abs(env.delta_star(0.0, a) - 0.70));
    }
    res.passed = worst <= 1e-12;
    res.detail = "max deviation " + fmt(worst);
    res.seconds = timer.elapsed();
    return res;
}

CriterionResult inner_max_closed_form() {
    Timer timer;
    CriterionResult res{4, "closed-form inner max vs vertex enumeration", true, "", 0.0};
    Rng rng(77);
    bool exact = true;
    for (int rep = 0; rep < 100; ++rep) {
        Eigen::VectorXd b(5);
        for (int i = 0; i < 5; ++i) b[i] = rng.normal(0.0, 1.0);
        VfSystem sys;
        sys.A = Eigen::MatrixXd::Zero(5, 5);
        sys.c = b;
        const InnerMax closed = inner_max_vf(sys, Eigen::VectorXd::Zero(5), 1.0);
        double brute = -1e300;
        for (int mask = 0; mask < 32; ++mask) {
            double val = 0.0;
            for (int i = 0; i < 5; ++i) val += ((mask >> i) & 1 ? 1.0 : -1.0) * b[i];
            brute = std::max(brute, val);
        }
        if (closed.value != brute) exact = false;
    }
    res.passed = exact;
    res.detail = exact ? "100/100 exact matches" : "mismatch against enumeration";
    res.seconds = timer.elapsed();
    return res;
}

CriterionResult mle_rate() {
    Timer timer;
    CriterionResult res{5, "MLE squared-Hellinger rate", true, "", 0.0};

    // oracle-in-class generator over three states
    const FeatureMap map(2);
    const std::vector<double> states = {-1.0, 0.0, 1.0};
    const std::vector<double> state_probs = {0.3, 0.4, 0.3};
    Eigen::MatrixXd truth_w(3, 3);
    truth_w << 0.5, 0.9, -0.3, -0.2, -0.6, 0.4, -0.3, -0.3, -0.1;
    const MultinomialLogit truth(truth_w);

    const std::vector<int> sizes = {1000, 4000, 16000};
    std::vector<double> mean_h2;
    for (int nt : sizes) {
        double acc = 0.0;
        for (int seed = 0; seed < 20; ++seed) {
            Rng rng(derive_seed(5150, {static_cast<std::uint64_t>(seed),
                                       static_cast<std::uint64_t>(nt)}));
            Eigen::MatrixXd xs(nt, map.dim());
            std::vector<int> ys(static_cast<std::size_t>(nt));
            for (int i = 0; i < nt; ++i) {
                const int si = rng.categorical({state_probs.data(), 3});
                const double s = states[static_cast<std::size_t>(si)];
                xs.row(i) = map.eval(s).transpose();
                const Eigen::VectorXd p = truth.probs(map.eval(s));
                const double v[3] = {p[0], p[1], p[2]};
                ys[static_cast<std::size_t>(i)] = rng.categorical({v, 3});
            }
            const LogitFit fit = fit_logit(xs, ys, 3);
            auto p_hat = [&](double s) { return fit.model.probs(map.eval(s)); };
            auto p_true = [&](double s) { return truth.probs(map.eval(s)); };
            acc += hellinger_sq(p_hat, p_true, states, state_probs);
        }
        mean_h2.push_back(acc / 20.0);
    }

    std::vector<double> xs_d(sizes.begin(), sizes.end());
    const double slope = slope_loglog(xs_d, mean_h2);
    res.passed = slope >= -1.3 && slope <= -0.7;
    res.detail = "log-log slope " + fmt(slope) + " (H2 means " + fmt(mean_h2[0]) + ", " +
                 fmt(mean_h2[1]) + ", " + fmt(mean_h2[2]) + ")";
    res.seconds = timer.elapsed();
    return res;
}

CriterionResult weak_duality() {
    Timer timer;
    CriterionResult res{6, "weak duality at dual terminations", true, "", 0.0};

    const TabularConfoundedMDP env = fixture_tabular();
    const TabularPolicy pi = fixture_policy();
    const FeatureMap map(4);
    const SimplexCode code(3);
    const OracleTabularNuisance oracle(env);
    const Eigen::VectorXd qnu = fixture_qnu(env, map);

    double worst_violation = -1e300;
    int checked = 0;
    Rng rng(606);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const Dataset data = generate(env, 300, 8, seed);
        const SampleCache cache = build_cache(data, map, code, oracle);
        const VfSystem sys = build_vf_system(cache, pi, env.gamma, WeightMode::Iv);
        const MinMaxFit fit = fit_v_hat(sys);
        const double alpha = 0.05;
        const double bound = fit.inner_max_value + alpha;
        const DualResult dual = dual_solve_vf(sys, qnu, alpha);

        int probes = 0;
        int attempts = 0;
        while (probes < 10 && attempts < 10000) {
            ++attempts;
            Eigen::VectorXd delta(5);
            for (int i = 0; i < 5; ++i) delta[i] = rng.normal(0.0, 0.05);
            const Eigen::VectorXd cand = fit.coef + delta;
            if ((sys.c + sys.A * cand).lpNorm<1>() > bound) continue;  // feasibility verified
            ++probes;
            ++checked;
            worst_violation = std::max(worst_violation, dual.value - qnu.dot(cand));
        }
        if (probes < 10) {
            res.passed = false;
            res.detail = "could not verify 10 feasible probes";
            res.seconds = timer.elapsed();
            return res;
        }
    }
    res.passed = worst_violation <= 1e-6;
    res.detail = "max (dual - probe) over " + std::to_string(checked) + " probes: " +
                 fmt(worst_violation);
    res.seconds = timer.elapsed();
    return res;
}

CriterionResult pessimism_validity() {
    Timer timer;
    CriterionResult res{7, "pessimistic values undershoot the true value", true, "", 0.0};

    const TabularConfoundedMDP env = fixture_tabular();
    const TabularPolicy pi = fixture_policy();
    const FeatureMap map(4);
    const SimplexCode code(3);
    const OracleTabularNuisance oracle(env);
    const Eigen::VectorXd qnu = fixture_qnu(env, map);
    const double j_true = true_j(env, pi);
    const int t_len = 8;

    const Eigen::VectorXd w_exact = exact_ratio(env, pi, t_len);
    const double w_box = std::max(2.0, 1.5 * interpolate_coef(map, w_exact).lpNorm<Eigen::Infinity>());

    int vf_ok = 0, mis_ok = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const Dataset data = generate(env, 500, t_len, seed);
        std::vector<SampleCache> caches;
        caches.push_back(build_cache(data, map, code, oracle));
        const LearnerContext ctx = make_context(std::move(caches), qnu, env.gamma);

        // VF side: bootstrap radius at the fitted value function
        {
            const VfSystem sys = build_vf_system(ctx.primary(), pi, env.gamma, WeightMode::Iv);
            const MinMaxFit fit = fit_v_hat(sys);
            const Eigen::MatrixXd parts =
                vf_residual_parts(ctx.primary(), pi, env.gamma, WeightMode::Iv, fit.coef);
            PessimismConfig cfg;
            cfg.kind = ObjectiveKind::Vf;
            cfg.mode = PessimismMode::ConstrainedDual;
            cfg.alpha_vf =
                calibrate_alpha(parts, 0.05, 200, derive_seed(seed, {kStreamCalibration, 1}));
            if (pessimistic_j_vf(ctx, pi, cfg) <= j_true + 1e-6) ++vf_ok;
        }
        // MIS side
        {
            const MisSystem sys =
                build_mis_system(ctx.primary(), pi, env.gamma, WeightMode::Iv, qnu);
            const MinMaxFit fit = fit_w_hat(sys, MinMaxConfig{w_box});
            const Eigen::MatrixXd parts =
                mis_residual_parts(ctx.primary(), pi, env.gamma, WeightMode::Iv, fit.coef);
            PessimismConfig cfg;
            cfg.kind = ObjectiveKind::Mis;
            cfg.mode = PessimismMode::ConstrainedDual;
            cfg.w_box = w_box;
            cfg.alpha_mis =
                calibrate_alpha(parts, 0.05, 200, derive_seed(seed, {kStreamCalibration, 2}));
            if (pessimistic_j_mis(ctx, pi, cfg) <= j_true + 1e-6) ++mis_ok;
        }
    }
    res.passed = vf_ok >= 18 && mis_ok >= 18;
    res.detail = "vf " + std::to_string(vf_ok) + "/20, mis " + std::to_string(mis_ok) + "/20";
    res.seconds = timer.elapsed();
    return res;
}

CriterionResult empirical_rate() {
    Timer timer;
    CriterionResult res{8, "empirical MIS rate toward J", true, "", 0.0};

    const TabularConfoundedMDP env = fixture_tabular();
    const TabularPolicy pi = fixture_policy();
    const FeatureMap map(4);
    const SimplexCode code(3);
    const OracleTabularNuisance oracle(env);
    const int t_len = 5;
    const double j_true = true_j(env, pi);
    const Eigen::VectorXd w_exact = exact_ratio(env, pi, t_len);
    const BoxedLinearW w_true{interpolate_coef(map, w_exact), 1e6};

    const std::vector<int> sizes = {1000, 10000, 100000};
    std::vector<double> mean_err;
    for (int m : sizes) {
        double acc = 0.0;
        for (int seed = 0; seed < 20; ++seed) {
            const Dataset data =
                generate(env, m, t_len, derive_seed(88, {static_cast<std::uint64_t>(seed),
                                                         static_cast<std::uint64_t>(m)}));
            const SampleCache cache = build_cache(data, map, code, oracle);
            acc += std::abs(l_mis_hat(cache, pi, w_true) - j_true);
        }
        mean_err.push_back(acc / 20.0);
    }
    std::vector<double> xs_d(sizes.begin(), sizes.end());
    const double slope = slope_loglog(xs_d, mean_err);
    res.passed = slope >= -0.65 && slope <= -0.35;
    res.detail = "log-log slope " + fmt(slope) + " (errors " + fmt(mean_err[0]) + ", " +
                 fmt(mean_err[1]) + ", " + fmt(mean_err[2]) + ")";
    res.seconds = timer.elapsed();
    return res;
}

namespace {

RunConfig figure_config(const Options& opt) {
    RunConfig cfg;
    cfg.env = "kidney";
    cfg.n = opt.figure_n;
    cfg.t_len = opt.figure_t;
    cfg.n_seeds = opt.figure_seeds;
    cfg.nuisance = "oracle";
    cfg.threads = 4;
    cfg.out_dir = opt.scratch_dir.empty() ? output_root() : opt.scratch_dir;
    return cfg;
}

}  // namespace

CriterionResult figure_reproduction(const Options& opt) {
    Timer timer;
    CriterionResult res{9, "kidney benchmark ordering at desk scale", true, "", 0.0};

    const RunConfig cfg = figure_config(opt);
    const BenchmarkOutput out = run_benchmark(cfg, kFigureMethods, "figure");

    std::map<std::string, std::vector<double>> by_method;
    for (const auto& row : out.rows) by_method[row.method].push_back(row.j_mean);

    auto mean_of = [&](const std::string& m) {
        const auto& v = by_method.at(m);
        double acc = 0.0;
        for (double x : v) acc += x;
        return acc / static_cast<double>(v.size());
    };
    auto sd_of = [&](const std::string& m) {
        const auto& v = by_method.at(m);
        const double mu = mean_of(m);
        double ss = 0.0;
        for (double x : v) ss += (x - mu) * (x - mu);
        return std::sqrt(ss / static_cast<double>(v.size() - 1));
    };
    const double n_seeds = static_cast<double>(cfg.n_seeds);

    const double behavior = mean_of("behavior");
    const double sd_behavior = sd_of("behavior");
    std::ostringstream detail;
    detail << "behavior " << fmt(behavior);
    bool ok = true;

    for (const std::string& m : {std::string("pess_IV"), std::string("no_pess_IV")}) {
        const double mu = mean_of(m);
        detail << ", " << m << " " << fmt(mu);
        if (!(mu > behavior)) ok = false;
    }
    for (const std::string& m : {std::string("pess_no_IV"), std::string("no_pess_no_IV")}) {
        const double mu = mean_of(m);
        const double pooled =
            std::sqrt(sd_of(m) * sd_of(m) / n_seeds + sd_behavior * sd_behavior / n_seeds);
        detail << ", " << m << " " << fmt(mu);
        if (!(mu <= behavior + pooled)) ok = false;
    }
    const double sd_pess = sd_of("pess_IV");
    const double sd_plain = sd_of("no_pess_IV");
    detail << ", sd(pess_IV) " << fmt(sd_pess) << " vs sd(no_pess_IV) " << fmt(sd_plain);
    if (!(sd_pess <= sd_plain)) ok = false;

    res.passed = ok;
    res.detail = detail.str() + " [" + out.run_dir + "]";
    res.seconds = timer.elapsed();
    return res;
}

CriterionResult benchmark_determinism(const Options& opt) {
    Timer timer;
    CriterionResult res{10, "benchmark byte determinism across runs and threads", true, "", 0.0};

    RunConfig cfg;
    cfg.env = "kidney";
    cfg.n = 40;
    cfg.t_len = 30;
    cfg.n_seeds = 2;
    cfg.zo_iterations = 30;
    cfg.eval_rollouts = 400;
    cfg.nuisance = "oracle";
    cfg.out_dir = opt.scratch_dir.empty() ? output_root() : opt.scratch_dir;
    const std::vector<std::string> methods = {"pess_IV", "no_pess_no_IV"};

    std::vector<std::string> digests;
    for (int threads : {1, 8, 1}) {
        cfg.threads = threads;
        const BenchmarkOutput out = run_benchmark(cfg, methods, "determinism");
        std::string digest;
        std::vector<std::string> files = {"results.csv", "plot_data.csv", "metadata.json"};
        for (const std::string& m : methods)
            for (int s = 1; s <= cfg.n_seeds; ++s)
                files.push_back("trace_" + m + "_" + std::to_string(s) + ".csv");
        for (const auto& f : files) digest += read_file(out.run_dir + "/" + f);
        digests.push_back(std::move(digest));
    }
    res.passed = digests[0] == digests[1] && digests[1] == digests[2];
    res.detail = res.passed ? "identical artifacts across 2 runs and thread counts {1, 8}"
                            : "artifact mismatch between runs";
    res.seconds = timer.elapsed();
    return res;
}

std::vector<CriterionResult> run_all(const Options& opt) {
    std::vector<CriterionResult> results;
    results.push_back(simplex_identities());
    results.push_back(identification_suite());
    results.push_back(kidney_compliance());
    results.push_back(inner_max_closed_form());
    results.push_back(mle_rate());
    results.push_back(weak_duality());
    results.push_back(pessimism_validity());
    results.push_back(empirical_rate());
    if (!opt.skip_slow) {
        results.push_back(figure_reproduction(opt));
        results.push_back(benchmark_determinism(opt));
    }
    return results;
}

int report(const std::vector<CriterionResult>& results) {
    int failures = 0;
    for (const auto& r : results) {
        std::printf("[%s] %2d %-50s %8.2fs  %s\n", r.passed ? "PASS" : "FAIL", r.id,
                    r.name.c_str(), r.seconds, r.detail.c_str());
        if (!r.passed) ++failures;
    }
    std::fflush(stdout);
    return failures;
}

}  // namespace ivrl::selftest
