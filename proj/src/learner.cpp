#include "ivrl/learner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ivrl/rng.hpp"

namespace ivrl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// theta(lambda) = [min_x coeff.x + lambda*||r0 + R x||_1 (box)] - lambda*alpha_total
// Returns the inner solution; finite == false marks an unbounded inner min.
struct DualProbe {
    bool finite = false;
    double theta = -kInf;
    double l1 = 0.0;
    Eigen::VectorXd x;
};

DualProbe probe(const Eigen::VectorXd& coeff, const Eigen::VectorXd& r0, const Eigen::MatrixXd& R,
                double lambda, double alpha_total, std::optional<double> box) {
    DualProbe p;
    const L1AffineResult res = minimize_l1_affine(coeff, lambda, r0, R, box);
    if (res.status != L1AffineResult::Status::Optimal) return p;
    p.finite = true;
    p.l1 = res.l1_norm;
    p.x = res.w;
    p.theta = res.objective - lambda * alpha_total;
    return p;
}

// Shared lambda search: doubling bracket then bisection on the supergradient
// g(lambda) = ||residual||_1 - alpha_total, which is nonincreasing. Every
// probe yields a valid dual lower bound; the best one is returned.
DualResult lagrangian_max(const Eigen::VectorXd& coeff, const Eigen::VectorXd& r0,
                          const Eigen::MatrixXd& R, double alpha_total, std::optional<double> box,
                          const DualConfig& cfg) {
    DualResult out;
    out.value = -kInf;
    auto consider = [&](double lambda, const DualProbe& p) {
        out.state.gap_history.push_back(p.finite ? p.l1 - alpha_total : kInf);
        if (p.finite && p.theta > out.value) {
            out.value = p.theta;
            out.state.lambda = lambda;
            out.state.v_coef = p.x;
            out.state.complementarity = std::abs(lambda * (p.l1 - alpha_total));
        }
    };

    int budget = cfg.max_iter;
    double lo = 0.0;

    // lambda = 0 is a valid probe only when the inner problem is bounded there
    DualProbe p0 = probe(coeff, r0, R, 0.0, alpha_total, box);
    --budget;
    if (p0.finite) {
        consider(0.0, p0);
        if (p0.l1 <= alpha_total) {  // constraint slack at the unconstrained minimizer
            out.state.iterations = cfg.max_iter - budget;
            return out;
        }
    }

    double hi = cfg.lambda_init;
    DualProbe ph;
    while (budget > 0) {
        ph = probe(coeff, r0, R, hi, alpha_total, box);
        --budget;
        consider(hi, ph);
        if (ph.finite && ph.l1 - alpha_total <= 0.0) break;
        if (ph.finite) lo = hi;
        hi *= 2.0;
        if (hi > cfg.lambda_cap) {
            if (!ph.finite)
                throw std::runtime_error(
                    "lagrangian_max: lambda cap reached with unbounded inner problem "
                    "(infeasibility suspected)");
            // supergradient still positive at the cap: alpha too tight for
            // this data; keep the best certified bound
            out.state.lambda = hi / 2.0;
            out.state.iterations = cfg.max_iter - budget;
            if (out.state.complementarity > cfg.comp_tol) return out;
            return out;
        }
    }

    while (budget-- > 0) {
        if (hi - lo <= 1e-14 * (1.0 + hi)) break;
        const double mid = 0.5 * (lo + hi);
        const DualProbe pm = probe(coeff, r0, R, mid, alpha_total, box);
        consider(mid, pm);
        if (!pm.finite || pm.l1 - alpha_total > 0.0)
            lo = mid;
        else
            hi = mid;
        if (pm.finite && std::abs(mid * (pm.l1 - alpha_total)) <= cfg.comp_tol &&
            pm.l1 - alpha_total <= cfg.comp_tol)
            break;
    }
    out.state.iterations = cfg.max_iter - budget;
    return out;
}

}  // namespace

DualResult dual_solve_vf(const VfSystem& sys, const Eigen::VectorXd& qnu, double alpha_vf,
                         const DualConfig& cfg) {
    if (alpha_vf < 0.0) throw std::invalid_argument("dual_solve_vf: alpha_vf must be >= 0");
    const MinMaxFit base = fit_v_hat(sys, MinMaxConfig{cfg.box, MinMaxBackend::Lp});

    if (std::isinf(alpha_vf)) {
        DualResult out;
        out.value = -kInf;
        out.state.unbounded = true;
        out.state.v_coef = base.coef;
        return out;
    }

    // fold the box scale of the test class into lambda by rescaling alpha
    const double alpha_total = (base.inner_max_value + alpha_vf) / cfg.box;
    DualResult out = lagrangian_max(qnu, sys.c, sys.A, alpha_total, std::nullopt, cfg);
    out.state.lambda /= cfg.box;  // report in the original scale
    return out;
}

DualResult dual_solve_mis(const MisSystem& sys, double alpha_mis, double w_box,
                          const DualConfig& cfg) {
    if (alpha_mis < 0.0) throw std::invalid_argument("dual_solve_mis: alpha_mis must be >= 0");
    const MinMaxFit base = fit_w_hat(sys, MinMaxConfig{w_box, MinMaxBackend::Lp});
    const double alpha_total = base.inner_max_value + alpha_mis;
    // residual m(w) = mbar - M w
    return lagrangian_max(sys.ell, sys.mbar, -sys.M, alpha_total, w_box, cfg);
}

LearnerContext make_context(std::vector<SampleCache> caches, Eigen::VectorXd qnu, double gamma) {
    if (caches.empty()) throw std::invalid_argument("make_context: need at least one cache");
    LearnerContext ctx;
    ctx.caches = std::move(caches);
    ctx.qnu = std::move(qnu);
    ctx.gamma = gamma;
    return ctx;
}

void prepare_noise(LearnerContext& ctx, int n_noise, double noise_sd, std::uint64_t noise_seed) {
    if (n_noise < 1) throw std::invalid_argument("prepare_noise: n_noise >= 1 required");
    ctx.noise.clear();
    const int nt = ctx.primary().total();
    for (int j = 0; j < n_noise; ++j) {
        Rng rng(derive_seed(noise_seed, {kStreamNoise, static_cast<std::uint64_t>(j)}));
        Eigen::VectorXd chi(nt);
        for (int i = 0; i < nt; ++i) chi[i] = rng.normal(0.0, noise_sd);
        ctx.noise.push_back(std::move(chi));
    }
}

double plain_value(const LearnerContext& ctx, const Policy& pi, const PessimismConfig& cfg) {
    const SampleCache& cache = ctx.primary();
    switch (cfg.kind) {
        case ObjectiveKind::Vf: {
            const VfSystem sys = build_vf_system(cache, pi, ctx.gamma, cfg.weights);
            return ctx.qnu.dot(fit_v_hat(sys).coef);
        }
        case ObjectiveKind::Mis: {
            const MisSystem sys = build_mis_system(cache, pi, ctx.gamma, cfg.weights, ctx.qnu);
            const MinMaxFit fit = fit_w_hat(sys, MinMaxConfig{cfg.w_box, MinMaxBackend::Lp});
            return sys.ell.dot(fit.coef);
        }
        case ObjectiveKind::Dr: {
            const VfSystem sysv = build_vf_system(cache, pi, ctx.gamma, cfg.weights);
            const MisSystem sysm = build_mis_system(cache, pi, ctx.gamma, cfg.weights, ctx.qnu);
            const Eigen::MatrixXd d_mat = build_dr_coupling(cache, pi, ctx.gamma, cfg.weights);
            const Eigen::VectorXd v = fit_v_hat(sysv).coef;
            const Eigen::VectorXd w = fit_w_hat(sysm, MinMaxConfig{cfg.w_box}).coef;
            return sysm.ell.dot(w) + w.dot(d_mat * v) + ctx.qnu.dot(v);
        }
    }
    throw std::logic_error("plain_value: unknown objective kind");
}

double pessimistic_j_vf(const LearnerContext& ctx, const Policy& pi, const PessimismConfig& cfg,
                        const DualConfig& dcfg) {
    double best = kInf;
    for (const SampleCache& cache : ctx.caches) {
        const VfSystem sys = build_vf_system(cache, pi, ctx.gamma, cfg.weights);
        const DualResult dual = dual_solve_vf(sys, ctx.qnu, cfg.alpha_vf, dcfg);
        best = std::min(best, dual.value);
    }
    return best;
}

double pessimistic_j_mis(const LearnerContext& ctx, const Policy& pi, const PessimismConfig& cfg,
                         const DualConfig& dcfg) {
    double best = kInf;
    for (const SampleCache& cache : ctx.caches) {
        const MisSystem sys = build_mis_system(cache, pi, ctx.gamma, cfg.weights, ctx.qnu);
        const DualResult dual = dual_solve_mis(sys, cfg.alpha_mis, cfg.w_box, dcfg);
        best = std::min(best, dual.value);
    }
    return best;
}

namespace {

// min coeff . x subject to ||r0 + R x||_1 <= alpha_total (and the box),
// via the same Lagrangian machinery; used by the DR block sweeps
DualResult constrained_lin_min(const Eigen::VectorXd& coeff, const Eigen::VectorXd& r0,
                               const Eigen::MatrixXd& R, double alpha_total,
                               std::optional<double> box, const DualConfig& cfg) {
    return lagrangian_max(coeff, r0, R, alpha_total, box, cfg);
}

}  // namespace

double pessimistic_j_dr(const LearnerContext& ctx, const Policy& pi, const PessimismConfig& cfg,
                        const DualConfig& dcfg) {
    double best = kInf;
    for (const SampleCache& cache : ctx.caches) {
        const VfSystem sysv = build_vf_system(cache, pi, ctx.gamma, cfg.weights);
        const MisSystem sysm = build_mis_system(cache, pi, ctx.gamma, cfg.weights, ctx.qnu);
        const Eigen::MatrixXd d_mat = build_dr_coupling(cache, pi, ctx.gamma, cfg.weights);

        const MinMaxFit vhat = fit_v_hat(sysv, MinMaxConfig{dcfg.box});
        const MinMaxFit what = fit_w_hat(sysm, MinMaxConfig{cfg.w_box});
        const double alpha_vf_total = (vhat.inner_max_value + cfg.alpha_vf) / dcfg.box;
        const double alpha_mis_total = what.inner_max_value + cfg.alpha_mis;

        Eigen::VectorXd w = what.coef;
        Eigen::VectorXd v = vhat.coef;
        // bilinear objective: alternate convex blocks, w first by default
        auto w_block = [&] {
            const Eigen::VectorXd coeff_w = sysm.ell + d_mat * v;
            const DualResult wres = constrained_lin_min(coeff_w, sysm.mbar, -sysm.M,
                                                        alpha_mis_total, cfg.w_box, dcfg);
            if (wres.state.v_coef.size() > 0) w = wres.state.v_coef;
        };
        auto v_block = [&] {
            const Eigen::VectorXd coeff_v = d_mat.transpose() * w + ctx.qnu;
            const DualResult vres =
                constrained_lin_min(coeff_v, sysv.c, sysv.A, alpha_vf_total, std::nullopt, dcfg);
            if (vres.state.v_coef.size() > 0) v = vres.state.v_coef;
        };
        for (int sweep = 0; sweep < 3; ++sweep) {
            if (cfg.dr_v_first) {
                v_block();
                w_block();
            } else {
                w_block();
                v_block();
            }
        }

        // feasibility certificate at the returned pair
        const double mis_resid = (sysm.mbar - sysm.M * w).lpNorm<1>();
        const double vf_resid = (sysv.c + sysv.A * v).lpNorm<1>();
        if (mis_resid > alpha_mis_total + 1e-6 || vf_resid > alpha_vf_total + 1e-6)
            throw std::runtime_error("pessimistic_j_dr: block solution violates its constraints");

        const double value = sysm.ell.dot(w) + w.dot(d_mat * v) + ctx.qnu.dot(v);
        best = std::min(best, value);
    }
    return best;
}

double noise_replicate_pessimism(const LearnerContext& ctx, const Policy& pi,
                                 const PessimismConfig& cfg) {
    if (ctx.noise.empty())
        throw std::runtime_error("noise_replicate_pessimism: call prepare_noise first");
    const SampleCache& cache = ctx.primary();
    double best = kInf;
    for (std::size_t j = 0; j < ctx.noise.size(); ++j) {
        try {
            const VfSystem sys =
                build_vf_system(cache, pi, ctx.gamma, cfg.weights, &ctx.noise[j]);
            best = std::min(best, ctx.qnu.dot(fit_v_hat(sys).coef));
        } catch (const std::exception& e) {
            throw std::runtime_error("noise_replicate_pessimism: replicate " + std::to_string(j) +
                                     " failed: " + e.what());
        }
    }
    return best;
}

ObjectiveFn make_objective(const LearnerContext& ctx, const PessimismConfig& cfg,
                           const DualConfig& dcfg) {
    switch (cfg.mode) {
        case PessimismMode::None:
            return [&ctx, cfg](const SoftmaxPolicy& pi) { return plain_value(ctx, pi, cfg); };
        case PessimismMode::NoiseReplicate:
            if (cfg.kind != ObjectiveKind::Vf)
                throw std::invalid_argument(
                    "make_objective: noise replicates apply to the VF objective");
            return [&ctx, cfg](const SoftmaxPolicy& pi) {
                return noise_replicate_pessimism(ctx, pi, cfg);
            };
        case PessimismMode::ConstrainedDual:
            switch (cfg.kind) {
                case ObjectiveKind::Vf:
                    return [&ctx, cfg, dcfg](const SoftmaxPolicy& pi) {
                        return pessimistic_j_vf(ctx, pi, cfg, dcfg);
                    };
                case ObjectiveKind::Mis:
                    return [&ctx, cfg, dcfg](const SoftmaxPolicy& pi) {
                        return pessimistic_j_mis(ctx, pi, cfg, dcfg);
                    };
                case ObjectiveKind::Dr:
                    return [&ctx, cfg, dcfg](const SoftmaxPolicy& pi) {
                        return pessimistic_j_dr(ctx, pi, cfg, dcfg);
                    };
            }
    }
    throw std::logic_error("make_objective: unknown configuration");
}

std::uint64_t param_hash(const Eigen::MatrixXd& weights) {
    // FNV-1a over the raw bytes
    std::uint64_t h = 14695981039346656037ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(weights.data());
    const std::size_t n = static_cast<std::size_t>(weights.size()) * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

LearnResult learn(const ObjectiveFn& objective, const FeatureMap& map, int k,
                  const ZeroOrderConfig& zcfg, std::uint64_t seed, const std::string& mode_label) {
    const int d = map.dim();
    SoftmaxPolicy pi = SoftmaxPolicy::uniform(map, k);

    auto eval = [&](const SoftmaxPolicy& p, int iter) {
        try {
            return objective(p);
        } catch (const std::exception& e) {
            throw std::runtime_error("learn: objective failed at iteration " +
                                     std::to_string(iter) + ": " + e.what());
        }
    };

    LearnResult result{pi, eval(pi, -1), {}, mode_label, seed};

    for (int it = 0; it < zcfg.iterations; ++it) {
        Rng rng(derive_seed(seed, {kStreamZeroOrder, static_cast<std::uint64_t>(it)}));
        Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(k, d);
        for (int p = 0; p < zcfg.perturbations; ++p) {
            Eigen::MatrixXd dir(k, d);
            for (int rr = 0; rr < k; ++rr)
                for (int cc = 0; cc < d; ++cc) dir(rr, cc) = rng.normal(0.0, 1.0);

            SoftmaxPolicy plus(map, pi.weights() + zcfg.smoothing * dir);
            SoftmaxPolicy minus(map, pi.weights() - zcfg.smoothing * dir);
            const double fp = eval(plus, it);
            const double fm = eval(minus, it);
            grad += ((fp - fm) / (2.0 * zcfg.smoothing)) * dir;
        }
        grad /= static_cast<double>(zcfg.perturbations);

        // normalized step: the estimator's scale varies wildly across the
        // policy space, so raw gradient steps can catapult the weights into
        // softmax saturation
        const double eta = zcfg.step0 / std::sqrt(1.0 + static_cast<double>(it));
        const double gn = grad.norm();
        if (gn > 1e-12) pi.weights() += (eta / gn) * grad;

        const double obj = eval(pi, it);
        result.trace.push_back(TraceRow{it, obj, grad.norm(), param_hash(pi.weights())});
        if (obj > result.pessimistic_j) {
            result.pessimistic_j = obj;
            result.policy = pi;
        }
    }
    return result;
}

double calibrate_alpha(const Eigen::MatrixXd& parts, double delta, int n_boot, std::uint64_t seed,
                       double c_cfg) {
    const int n = static_cast<int>(parts.rows());
    if (n < 2) throw std::invalid_argument("calibrate_alpha: need at least two trajectories");
    const Eigen::VectorXd center = parts.colwise().mean();

    std::vector<double> devs;
    devs.reserve(static_cast<std::size_t>(n_boot));
    for (int b = 0; b < n_boot; ++b) {
        Rng rng(derive_seed(seed, {kStreamCalibration, static_cast<std::uint64_t>(b)}));
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(parts.cols());
        for (int i = 0; i < n; ++i)
            acc += parts.row(static_cast<int>(rng.uniform() * n)).transpose();
        acc /= static_cast<double>(n);
        devs.push_back((acc - center).lpNorm<1>());
    }
    std::sort(devs.begin(), devs.end());
    const auto idx = static_cast<std::size_t>(
        std::min<double>(std::ceil((1.0 - delta) * n_boot), n_boot - 1));
    return c_cfg * devs[idx];
}

}  // namespace ivrl
