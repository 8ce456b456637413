#include <doctest.h>

#include <cmath>

#include "ivrl/learner.hpp"
#include "ivrl/lp.hpp"
#include "ivrl/rng.hpp"

using namespace ivrl;

namespace {

struct Fixture {
    TabularConfoundedMDP env = fixture_tabular();
    FeatureMap map{4};
    SimplexCode code{3};
    OracleTabularNuisance oracle{env};
    TabularPolicy pi{[] {
        Eigen::MatrixXd p(3, 3);
        p << 0.6, 0.3, 0.1, 0.2, 0.2, 0.6, 0.1, 0.8, 0.1;
        return p;
    }()};
    int t_len = 8;

    Eigen::VectorXd qnu() const {
        std::vector<double> states{0.0, 1.0, 2.0};
        std::vector<double> weights{env.nu[0], env.nu[1], env.nu[2]};
        return (1.0 - env.gamma) * nu_feature_mean(map, states, weights);
    }

    LearnerContext context(int n, std::uint64_t seed) const {
        const Dataset data = generate(env, n, t_len, seed);
        std::vector<SampleCache> caches;
        caches.push_back(build_cache(data, map, code, oracle));
        return make_context(std::move(caches), qnu(), env.gamma);
    }
};

// direct constrained LP: min coeff . w subject to ||r0 + R w||_1 <= bound
double constrained_min_lp(const Eigen::VectorXd& coeff, const Eigen::VectorXd& r0,
                          const Eigen::MatrixXd& R, double bound) {
    const int d = static_cast<int>(R.cols());
    const int m = static_cast<int>(R.rows());
    const int nv = 2 * d + m;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * m + 1, nv);
    Eigen::VectorXd b(2 * m + 1);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(nv);
    A.block(0, 0, m, d) = R;
    A.block(0, d, m, d) = -R;
    A.block(0, 2 * d, m, m) = -Eigen::MatrixXd::Identity(m, m);
    b.head(m) = -r0;
    A.block(m, 0, m, d) = -R;
    A.block(m, d, m, d) = R;
    A.block(m, 2 * d, m, m) = -Eigen::MatrixXd::Identity(m, m);
    b.segment(m, m) = r0;
    A.block(2 * m, 2 * d, 1, m).setOnes();
    b[2 * m] = bound;
    c.head(d) = coeff;
    c.segment(d, d) = -coeff;
    const LpResult res = solve_lp(A, b, c);
    REQUIRE(res.status == LpResult::Status::Optimal);
    return res.objective;
}

}  // namespace

TEST_CASE("zero-radius dual equals the value at the min-max fit") {
    Fixture fx;
    const LearnerContext ctx = fx.context(400, 3);
    const VfSystem sys = build_vf_system(ctx.primary(), fx.pi, fx.env.gamma, WeightMode::Iv);
    const MinMaxFit fit = fit_v_hat(sys);

    const DualResult dual = dual_solve_vf(sys, ctx.qnu, 0.0);
    CHECK(dual.value <= ctx.qnu.dot(fit.coef) + 1e-9);
    CHECK(dual.value >= ctx.qnu.dot(fit.coef) - 1e-4 * (1.0 + std::abs(dual.value)));
    CHECK(dual.state.lambda > 0.0);
}

TEST_CASE("infinite radius reports unboundedness") {
    Fixture fx;
    const LearnerContext ctx = fx.context(100, 4);
    const VfSystem sys = build_vf_system(ctx.primary(), fx.pi, fx.env.gamma, WeightMode::Iv);
    const DualResult dual =
        dual_solve_vf(sys, ctx.qnu, std::numeric_limits<double>::infinity());
    CHECK(dual.state.unbounded);
    CHECK(std::isinf(dual.value));
}

TEST_CASE("dual value is a certified lower bound for feasible probes") {
    Fixture fx;
    Rng rng(17);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const LearnerContext ctx = fx.context(300, seed);
        const VfSystem sys = build_vf_system(ctx.primary(), fx.pi, fx.env.gamma, WeightMode::Iv);
        const MinMaxFit fit = fit_v_hat(sys);
        const double alpha = 0.05;
        const double bound = fit.inner_max_value + alpha;
        const DualResult dual = dual_solve_vf(sys, ctx.qnu, alpha);

        int probes = 0;
        while (probes < 10) {
            Eigen::VectorXd delta(5);
            for (int i = 0; i < 5; ++i) delta[i] = rng.normal(0.0, 0.05);
            Eigen::VectorXd cand = fit.coef + delta;
            if ((sys.c + sys.A * cand).lpNorm<1>() > bound) continue;  // verify feasibility
            ++probes;
            CHECK(dual.value <= ctx.qnu.dot(cand) + 1e-6);
        }
    }
}

TEST_CASE("dual value matches the direct constrained LP (strong duality)") {
    Fixture fx;
    for (std::uint64_t seed = 11; seed <= 13; ++seed) {
        const LearnerContext ctx = fx.context(250, seed);
        const VfSystem sys = build_vf_system(ctx.primary(), fx.pi, fx.env.gamma, WeightMode::Iv);
        const MinMaxFit fit = fit_v_hat(sys);
        const double alpha = 0.02;
        const DualResult dual = dual_solve_vf(sys, ctx.qnu, alpha);
        const double direct =
            constrained_min_lp(ctx.qnu, sys.c, sys.A, fit.inner_max_value + alpha);
        CHECK(dual.value <= direct + 1e-7);
        CHECK(dual.value >= direct - 1e-4 * (1.0 + std::abs(direct)));
    }
}

TEST_CASE("true value function is feasible and bounds the dual from above") {
    Fixture fx;
    const Eigen::VectorXd v_exact = exact_value(fx.env, fx.pi);
    const double j_true = true_j(fx.env, fx.pi);

    int covered = 0;
    const int seeds = 10;
    for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
        const LearnerContext ctx = fx.context(500, seed);
        const VfSystem sys = build_vf_system(ctx.primary(), fx.pi, fx.env.gamma, WeightMode::Iv);
        const MinMaxFit fit = fit_v_hat(sys);
        const Eigen::MatrixXd parts =
            vf_residual_parts(ctx.primary(), fx.pi, fx.env.gamma, WeightMode::Iv, fit.coef);
        const double alpha =
            calibrate_alpha(parts, 0.05, 200, derive_seed(seed, {kStreamCalibration}));
        const DualResult dual = dual_solve_vf(sys, ctx.qnu, alpha);
        if (dual.value <= j_true + 1e-6) ++covered;
    }
    CHECK(covered >= 8);
}

TEST_CASE("pessimistic MIS value: zero radius and sign sanity") {
    Fixture fx;
    const LearnerContext ctx = fx.context(400, 9);
    PessimismConfig cfg;
    cfg.kind = ObjectiveKind::Mis;
    cfg.mode = PessimismMode::ConstrainedDual;
    cfg.w_box = 3.0;
    cfg.alpha_mis = 0.0;

    const MisSystem sys =
        build_mis_system(ctx.primary(), fx.pi, fx.env.gamma, WeightMode::Iv, ctx.qnu);
    const MinMaxFit what = fit_w_hat(sys, MinMaxConfig{cfg.w_box});
    const double val = pessimistic_j_mis(ctx, fx.pi, cfg);
    CHECK(val <= sys.ell.dot(what.coef) + 1e-9);
    CHECK(val >= sys.ell.dot(what.coef) - 1e-4 * (1.0 + std::abs(val)));
}

TEST_CASE("nonnegative rewards with feasible zero ratio give nonpositive value") {
    // shift all rewards up so they are almost surely nonnegative; if w == 0
    // passes the estimation constraint the pessimistic MIS value cannot
    // exceed zero
    Fixture fx;
    TabularConfoundedMDP env = fx.env;
    for (auto& r : env.reward) r += 2.0;
    env.validate();
    const Dataset data = generate(env, 300, fx.t_len, 21);
    std::vector<SampleCache> caches;
    caches.push_back(build_cache(data, fx.map, fx.code, OracleTabularNuisance(env)));
    LearnerContext ctx = make_context(std::move(caches), fx.qnu(), env.gamma);

    const MisSystem sys =
        build_mis_system(ctx.primary(), fx.pi, env.gamma, WeightMode::Iv, ctx.qnu);
    const double gap_zero =
        (sys.mbar).lpNorm<1>() - fit_w_hat(sys, MinMaxConfig{1.0}).inner_max_value;

    PessimismConfig cfg;
    cfg.kind = ObjectiveKind::Mis;
    cfg.mode = PessimismMode::ConstrainedDual;
    cfg.w_box = 1.0;
    cfg.alpha_mis = gap_zero + 0.01;  // makes w == 0 feasible
    const double val = pessimistic_j_mis(ctx, fx.pi, cfg);
    CHECK(val <= 1e-6);
}

TEST_CASE("pessimistic DR value at the population fixture") {
    Fixture fx;
    const PopulationEvaluator pop(fx.env, fx.t_len);
    const Eigen::VectorXd qnu = fx.qnu();
    const double j_true = true_j(fx.env, fx.pi);

    const VfSystem sysv = build_vf_system_pop(pop, fx.pi, fx.map, fx.oracle);
    const MisSystem sysm = build_mis_system_pop(pop, fx.pi, fx.map, fx.oracle, qnu);

    // context with a synthetic single cache is not needed: drive the block
    // solver directly through pessimistic_j_dr on a large sample instead
    const LearnerContext ctx = fx.context(4000, 31);
    PessimismConfig cfg;
    cfg.kind = ObjectiveKind::Dr;
    cfg.mode = PessimismMode::ConstrainedDual;
    cfg.w_box = 8.0;
    cfg.alpha_vf = 0.05;
    cfg.alpha_mis = 0.05;
    const double val = pessimistic_j_dr(ctx, fx.pi, cfg);
    CHECK(val <= j_true + 0.05);  // pessimistic at sampling scale

    // block order changes the local solution only within tolerance
    PessimismConfig swapped = cfg;
    swapped.dr_v_first = true;
    const double val2 = pessimistic_j_dr(ctx, fx.pi, swapped);
    CHECK(std::abs(val - val2) <= 1e-4 * (1.0 + std::abs(val)));
}

TEST_CASE("noise replicates: degenerate sd, nesting, and pessimism ordering") {
    Fixture fx;
    LearnerContext ctx = fx.context(200, 41);

    PessimismConfig plain_cfg;
    plain_cfg.kind = ObjectiveKind::Vf;
    plain_cfg.mode = PessimismMode::None;
    const double plain = plain_value(ctx, fx.pi, plain_cfg);

    // zero noise: every replicate equals the plain estimate
    prepare_noise(ctx, 5, 0.0, 77);
    PessimismConfig cfg;
    cfg.kind = ObjectiveKind::Vf;
    cfg.mode = PessimismMode::NoiseReplicate;
    const double zero_sd = noise_replicate_pessimism(ctx, fx.pi, cfg);
    CHECK(zero_sd == doctest::Approx(plain).epsilon(1e-12));

    // nested replicate sets: the minimum is non-increasing in n_noise
    std::vector<double> values;
    for (int n_noise : {1, 3, 5, 10}) {
        prepare_noise(ctx, n_noise, 0.1, 77);
        values.push_back(noise_replicate_pessimism(ctx, fx.pi, cfg));
    }
    for (std::size_t i = 1; i < values.size(); ++i) CHECK(values[i] <= values[i - 1] + 1e-12);

    // pessimism ordering vs the plain estimate
    CHECK(values.back() <= plain + 1e-12);
}

TEST_CASE("dual pessimism is monotone in the radius") {
    Fixture fx;
    const LearnerContext ctx = fx.context(300, 51);
    const VfSystem sys = build_vf_system(ctx.primary(), fx.pi, fx.env.gamma, WeightMode::Iv);
    const DualResult tight = dual_solve_vf(sys, ctx.qnu, 0.0);
    const DualResult loose = dual_solve_vf(sys, ctx.qnu, 0.05);
    CHECK(loose.value <= tight.value + 1e-6);
}

TEST_CASE("learner finds the dominant action") {
    // single state, two actions, action 1 strictly dominates
    TabularConfoundedMDP env;
    env.n_s = 1;
    env.n_u = 1;
    env.k = 2;
    env.gamma = 0.9;
    env.allocate();
    env.p_u(0, 0) = 1.0;
    env.theta(0, 0) = 0.5;
    env.theta(0, 1) = 0.5;
    const double delta = 0.6;
    for (int z = 0; z < 2; ++z)
        for (int a = 0; a < 2; ++a)
            env.b_at(0, 0, z, a) = (1.0 - delta) * 0.5 + (z == a ? delta : 0.0);
    for (int a = 0; a < 2; ++a) env.p_at(0, 0, a, 0) = 1.0;
    env.r_at(0, 0, 0) = -0.5;
    env.r_at(0, 0, 1) = 0.5;
    env.zeta[0] = 1.0;
    env.nu[0] = 1.0;
    env.validate();

    const FeatureMap map(4);
    const SimplexCode code(2);
    const OracleTabularNuisance oracle(env);
    const Eigen::VectorXd qnu = (1.0 - env.gamma) * nu_feature_mean(map, {0.0}, {1.0});

    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const Dataset data = generate(env, 150, 10, seed);
        std::vector<SampleCache> caches;
        caches.push_back(build_cache(data, map, code, oracle));
        LearnerContext ctx = make_context(std::move(caches), qnu, env.gamma);

        PessimismConfig cfg;
        cfg.kind = ObjectiveKind::Vf;
        cfg.mode = PessimismMode::None;
        const ObjectiveFn objective = make_objective(ctx, cfg);
        const LearnResult res = learn(objective, map, 2, {}, seed, "plain_vf");
        CHECK(res.policy.probs(0.0)[1] >= 0.95);
    }
}

TEST_CASE("constant objective leaves the policy near the origin") {
    const FeatureMap map(4);
    ObjectiveFn constant = [](const SoftmaxPolicy&) { return 1.0; };
    ZeroOrderConfig zcfg;
    const LearnResult res = learn(constant, map, 3, zcfg, 7, "const");
    // zero gradient estimates: parameters never move
    CHECK(res.policy.weights().lpNorm<Eigen::Infinity>() <= zcfg.step0);
    CHECK(res.pessimistic_j == 1.0);
}

TEST_CASE("learn is bit-deterministic in all inputs") {
    Fixture fx;
    LearnerContext ctx = fx.context(100, 5);
    PessimismConfig cfg;
    cfg.kind = ObjectiveKind::Vf;
    cfg.mode = PessimismMode::None;
    const ObjectiveFn objective = make_objective(ctx, cfg);

    ZeroOrderConfig zcfg;
    zcfg.iterations = 10;
    const LearnResult a = learn(objective, fx.map, 3, zcfg, 99, "plain_vf");
    const LearnResult b = learn(objective, fx.map, 3, zcfg, 99, "plain_vf");
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].param_hash == b.trace[i].param_hash);
        CHECK(a.trace[i].objective == b.trace[i].objective);
    }
    CHECK(param_hash(a.policy.weights()) == param_hash(b.policy.weights()));

    const LearnResult c = learn(objective, fx.map, 3, zcfg, 100, "plain_vf");
    CHECK(param_hash(a.policy.weights()) != param_hash(c.policy.weights()));
}

TEST_CASE("objective failures carry the iteration index") {
    const FeatureMap map(2);
    int calls = 0;
    ObjectiveFn failing = [&calls](const SoftmaxPolicy&) {
        if (++calls > 5) throw std::runtime_error("boom");
        return 0.0;
    };
    ZeroOrderConfig zcfg;
    zcfg.iterations = 5;
    try {
        learn(failing, map, 2, zcfg, 1, "fail");
        FAIL("expected propagated failure");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("iteration") != std::string::npos);
    }
}

TEST_CASE("naive-weight pipeline recovers the behavior value on policy b") {
    // a behavior that ignores u and z is itself a state-only policy, so the
    // naive on-policy estimate must recover its value
    TabularConfoundedMDP env = fixture_tabular();
    const double mix[3][3] = {{0.5, 0.3, 0.2}, {0.3, 0.4, 0.3}, {0.2, 0.2, 0.6}};
    for (int s = 0; s < 3; ++s)
        for (int u = 0; u < 2; ++u)
            for (int z = 0; z < 3; ++z)
                for (int a = 0; a < 3; ++a) env.b_at(s, u, z, a) = mix[s][a];
    env.validate();

    Eigen::MatrixXd pi_table(3, 3);
    for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 3; ++a) pi_table(s, a) = mix[s][a];
    const TabularPolicy pi_b(pi_table);
    const double j_b = true_j(env, pi_b);  // nu-weighted value of b itself

    const FeatureMap map(4);
    const SimplexCode code(3);
    const Dataset data = generate(env, 3000, 8, 13);
    SampleCache cache = build_cache(data, map, code, OracleTabularNuisance(env));
    const Eigen::MatrixXd prop = env.marginal_propensity();
    attach_propensity(cache, [&prop](double s, int a) {
        return prop(static_cast<Eigen::Index>(std::llround(s)), a);
    });

    std::vector<double> states{0.0, 1.0, 2.0};
    std::vector<double> weights{env.nu[0], env.nu[1], env.nu[2]};
    const Eigen::VectorXd qnu = (1.0 - env.gamma) * nu_feature_mean(map, states, weights);

    std::vector<SampleCache> caches;
    caches.push_back(std::move(cache));
    LearnerContext ctx = make_context(std::move(caches), qnu, env.gamma);
    PessimismConfig cfg;
    cfg.kind = ObjectiveKind::Vf;
    cfg.mode = PessimismMode::None;
    cfg.weights = WeightMode::Naive;
    const double est = plain_value(ctx, pi_b, cfg);
    CHECK(std::abs(est - j_b) < 0.05);
}
