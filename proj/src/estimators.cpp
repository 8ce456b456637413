#include "ivrl/estimators.hpp"

#include <cmath>
#include <stdexcept>

namespace ivrl {

IvWeight iv_weight(double s, int z, int a, const Policy& pi, const Nuisance& nuisance,
                   const SimplexCode& code) {
    IvWeight w;
    w.inner_za = code.inner(z, a);
    w.pi_prob = pi.prob(s, a);
    w.delta = nuisance.delta(s, a);
    w.theta = nuisance.theta(s, z);
    w.value = w.inner_za * w.pi_prob / (w.delta * w.theta);
    return w;
}

SampleCache build_cache(const Dataset& data, const FeatureMap& map, const SimplexCode& code,
                        const Nuisance& nuisance) {
    if (data.trajectories.empty() || data.trajectories.front().empty())
        throw std::invalid_argument("build_cache: empty dataset");
    SampleCache cache;
    cache.k = code.k();
    cache.n_traj = data.n();
    cache.t_len = data.t_len();
    cache.map = map;

    const int nt = cache.total();
    const int d = map.dim();
    cache.s.resize(nt);
    cache.r.resize(nt);
    cache.s_next.resize(nt);
    cache.z.resize(static_cast<std::size_t>(nt));
    cache.a.resize(static_cast<std::size_t>(nt));
    cache.psi_s.resize(nt, d);
    cache.psi_next.resize(nt, d);
    cache.inner_za.resize(nt);
    cache.theta_v.resize(nt);
    cache.delta_v.resize(nt);

    int row = 0;
    for (const auto& traj : data.trajectories) {
        if (static_cast<int>(traj.size()) != cache.t_len)
            throw std::invalid_argument("build_cache: ragged trajectories");
        for (const auto& st : traj) {
            cache.s[row] = st.s;
            cache.r[row] = st.r;
            cache.s_next[row] = st.s_next;
            cache.z[static_cast<std::size_t>(row)] = st.z;
            cache.a[static_cast<std::size_t>(row)] = st.a;
            cache.psi_s.row(row) = map.eval(st.s).transpose();
            cache.psi_next.row(row) = map.eval(st.s_next).transpose();
            cache.inner_za[row] = code.inner(st.z, st.a);
            cache.theta_v[row] = nuisance.theta(st.s, st.z);
            cache.delta_v[row] = nuisance.delta(st.s, st.a);
            ++row;
        }
    }
    cache.gram_ss = cache.psi_s.transpose() * cache.psi_s / static_cast<double>(nt);
    return cache;
}

void attach_propensity(SampleCache& cache, const PropensityFn& prop) {
    cache.prop_v.resize(cache.total());
    for (int i = 0; i < cache.total(); ++i)
        cache.prop_v[i] = prop(cache.s[i], cache.a[static_cast<std::size_t>(i)]);
    if (cache.prop_v.size() > 0 && cache.prop_v.minCoeff() <= 0.0)
        throw std::invalid_argument("attach_propensity: propensity must be positive on the data");
}

Eigen::VectorXd rho_weights(const SampleCache& cache, const Policy& pi, WeightMode mode) {
    if (mode == WeightMode::Naive && cache.prop_v.size() != cache.total())
        throw std::runtime_error("rho_weights: naive mode requires an attached propensity model");
    const int nt = cache.total();
    Eigen::VectorXd pi_at(nt);

    if (const auto* soft = dynamic_cast<const SoftmaxPolicy*>(&pi)) {
        // batched softmax over all samples
        Eigen::MatrixXd logits = cache.psi_s * soft->weights().transpose();  // NT x K
        for (int i = 0; i < nt; ++i) {
            const double m = logits.row(i).maxCoeff();
            double z = 0.0;
            for (int a = 0; a < cache.k; ++a) z += std::exp(logits(i, a) - m);
            pi_at[i] =
                std::exp(logits(i, cache.a[static_cast<std::size_t>(i)]) - m) / z;
        }
    } else {
        for (int i = 0; i < nt; ++i)
            pi_at[i] = pi.probs(cache.s[i])[cache.a[static_cast<std::size_t>(i)]];
    }

    if (mode == WeightMode::Iv)
        return (cache.inner_za.array() * pi_at.array() /
                (cache.delta_v.array() * cache.theta_v.array()))
            .matrix();
    return (pi_at.array() / cache.prop_v.array()).matrix();
}

Eigen::VectorXd nu_feature_mean(const FeatureMap& map, const std::vector<double>& states,
                                const std::vector<double>& weights) {
    if (states.empty()) throw std::invalid_argument("nu_feature_mean: empty sample");
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(map.dim());
    if (weights.empty()) {
        for (double s : states) acc += map.eval(s);
        return acc / static_cast<double>(states.size());
    }
    if (weights.size() != states.size())
        throw std::invalid_argument("nu_feature_mean: weight size mismatch");
    for (std::size_t i = 0; i < states.size(); ++i) acc += weights[i] * map.eval(states[i]);
    return acc;
}

VfSystem build_vf_system(const SampleCache& cache, const Policy& pi, double gamma, WeightMode mode,
                         const Eigen::VectorXd* extra_reward) {
    const Eigen::VectorXd rho = rho_weights(cache, pi, mode);
    const double scale = 1.0 / static_cast<double>(cache.total());

    // A = gamma * psi_s^T diag(rho) psi_next / NT - psi_s^T psi_s / NT,
    // c = psi_s^T (rho .* r) / NT; single-threaded fixed-order products keep
    // results bit-stable no matter how surrounding cells are scheduled
    VfSystem sys;
    sys.A = gamma * scale * (cache.psi_s.transpose() * rho.asDiagonal() * cache.psi_next) -
            cache.gram_ss;
    if (extra_reward != nullptr) {
        sys.c = scale * (cache.psi_s.transpose() *
                         (rho.array() * (cache.r + *extra_reward).array()).matrix());
    } else {
        sys.c = scale * (cache.psi_s.transpose() * (rho.array() * cache.r.array()).matrix());
    }
    return sys;
}

MisSystem build_mis_system(const SampleCache& cache, const Policy& pi, double gamma,
                           WeightMode mode, const Eigen::VectorXd& qnu) {
    const Eigen::VectorXd rho = rho_weights(cache, pi, mode);
    const double scale = 1.0 / static_cast<double>(cache.total());

    MisSystem sys;
    sys.M = scale * ((cache.psi_s - gamma * cache.psi_next).transpose() * rho.asDiagonal() *
                     cache.psi_s);
    sys.ell = scale * (cache.psi_s.transpose() * (rho.array() * cache.r.array()).matrix());
    sys.mbar = qnu;
    return sys;
}

Eigen::MatrixXd build_dr_coupling(const SampleCache& cache, const Policy& pi, double gamma,
                                  WeightMode mode) {
    const Eigen::VectorXd rho = rho_weights(cache, pi, mode);
    const double scale = 1.0 / static_cast<double>(cache.total());
    return scale * (cache.psi_s.transpose() * rho.asDiagonal() *
                    (gamma * cache.psi_next - cache.psi_s));
}

Eigen::MatrixXd vf_residual_parts(const SampleCache& cache, const Policy& pi, double gamma,
                                  WeightMode mode, const Eigen::VectorXd& v_coef) {
    const Eigen::VectorXd rho = rho_weights(cache, pi, mode);
    const int d = cache.dim();
    const int t_len = cache.t_len;
    Eigen::MatrixXd parts = Eigen::MatrixXd::Zero(cache.n_traj, d);
    for (int i = 0; i < cache.n_traj; ++i) {
        for (int t = 0; t < t_len; ++t) {
            const int idx = i * t_len + t;
            const double resid = rho[idx] * (cache.r[idx] + gamma * cache.psi_next.row(idx).dot(
                                                                      v_coef)) -
                                 cache.psi_s.row(idx).dot(v_coef);
            parts.row(i) += resid * cache.psi_s.row(idx);
        }
        parts.row(i) /= static_cast<double>(t_len);
    }
    return parts;
}

Eigen::MatrixXd mis_residual_parts(const SampleCache& cache, const Policy& pi, double gamma,
                                   WeightMode mode, const Eigen::VectorXd& w_coef) {
    const Eigen::VectorXd rho = rho_weights(cache, pi, mode);
    const int d = cache.dim();
    const int t_len = cache.t_len;
    Eigen::MatrixXd parts = Eigen::MatrixXd::Zero(cache.n_traj, d);
    for (int i = 0; i < cache.n_traj; ++i) {
        for (int t = 0; t < t_len; ++t) {
            const int idx = i * t_len + t;
            const double w_s = cache.psi_s.row(idx).dot(w_coef);
            parts.row(i) += rho[idx] * w_s *
                            (cache.psi_s.row(idx) - gamma * cache.psi_next.row(idx));
        }
        parts.row(i) /= static_cast<double>(t_len);
    }
    return parts;
}

double phi_vf_hat(const SampleCache& cache, const Policy& pi, const LinearV& v,
                  const BoxedLinearW& g, double gamma, WeightMode mode) {
    const VfSystem sys = build_vf_system(cache, pi, gamma, mode);
    return g.coef.dot(sys.residual(v.coef));
}

double phi_mis_hat(const SampleCache& cache, const Policy& pi, const BoxedLinearW& w,
                   const LinearV& f, double gamma, const Eigen::VectorXd& qnu, WeightMode mode) {
    const MisSystem sys = build_mis_system(cache, pi, gamma, mode, qnu);
    return f.coef.dot(sys.residual(w.coef));
}

double l_mis_hat(const SampleCache& cache, const Policy& pi, const BoxedLinearW& w,
                 WeightMode mode) {
    // the MIS value needs only ell; reuse the system builder with qnu = 0
    const MisSystem sys =
        build_mis_system(cache, pi, 0.0, mode, Eigen::VectorXd::Zero(cache.dim()));
    return sys.ell.dot(w.coef);
}

double l_dr_hat(const SampleCache& cache, const Policy& pi, const BoxedLinearW& w, const LinearV& v,
                double gamma, const Eigen::VectorXd& qnu, WeightMode mode) {
    const MisSystem sys = build_mis_system(cache, pi, gamma, mode, qnu);
    const Eigen::MatrixXd d_mat = build_dr_coupling(cache, pi, gamma, mode);
    return sys.ell.dot(w.coef) + w.coef.dot(d_mat * v.coef) + qnu.dot(v.coef);
}

InnerMax inner_max_vf(const VfSystem& sys, const Eigen::VectorXd& v_coef, double box) {
    InnerMax im;
    im.b = sys.residual(v_coef);
    im.direction.resize(im.b.size());
    double l1 = 0.0;
    for (Eigen::Index j = 0; j < im.b.size(); ++j) {
        im.direction[j] = im.b[j] >= 0.0 ? box : -box;  // sign(0) := +1
        l1 += std::abs(im.b[j]);
    }
    im.value = box * l1;
    return im;
}

InnerMax inner_max_mis(const MisSystem& sys, const Eigen::VectorXd& w_coef, double box) {
    InnerMax im;
    im.b = sys.residual(w_coef);
    im.direction.resize(im.b.size());
    double l1 = 0.0;
    for (Eigen::Index j = 0; j < im.b.size(); ++j) {
        im.direction[j] = im.b[j] >= 0.0 ? box : -box;
        l1 += std::abs(im.b[j]);
    }
    im.value = box * l1;
    return im;
}

namespace {

bool gram_degenerate(const Eigen::MatrixXd& a) {
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
    const double smax = svd.singularValues().maxCoeff();
    return smax <= 0.0 || svd.singularValues().minCoeff() < 1e-12 * smax;
}

}  // namespace

MinMaxFit fit_v_hat(const VfSystem& sys, const MinMaxConfig& cfg) {
    const int d = static_cast<int>(sys.A.cols());
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(d);
    L1AffineResult res;
    if (cfg.backend == MinMaxBackend::Lp) {
        res = minimize_l1_affine(zero, 1.0, sys.c, sys.A);
    } else {
        // a full-rank system can drive the residual to zero exactly, which
        // is then a valid Polyak target; rank-deficient systems fall back to
        // the adaptive level and are only approximate
        SubgradientConfig scfg;
        scfg.use_target = !gram_degenerate(sys.A);
        res = minimize_l1_subgradient(zero, 1.0, sys.c, sys.A, std::nullopt, scfg);
    }
    if (res.status == L1AffineResult::Status::IterLimit)
        throw std::runtime_error("fit_v_hat: solver hit iteration cap");

    MinMaxFit fit;
    fit.coef = res.w;
    fit.iterations = res.iterations;
    fit.residual_l1 = res.l1_norm;
    fit.gram_degenerate = gram_degenerate(sys.A);
    const InnerMax im = inner_max_vf(sys, fit.coef, cfg.box);
    fit.inner_max_value = im.value;
    fit.dual_certificate = im.direction;
    return fit;
}

MinMaxFit fit_w_hat(const MisSystem& sys, const MinMaxConfig& cfg) {
    const int d = static_cast<int>(sys.M.cols());
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(d);
    // residual m(w) = mbar - M w; reuse the affine form with R = -M
    L1AffineResult res;
    if (cfg.backend == MinMaxBackend::Lp) {
        res = minimize_l1_affine(zero, 1.0, sys.mbar, -sys.M, cfg.box);
    } else {
        SubgradientConfig scfg;
        res = minimize_l1_subgradient(zero, 1.0, sys.mbar, -sys.M, cfg.box, scfg);
    }
    if (res.status == L1AffineResult::Status::IterLimit)
        throw std::runtime_error("fit_w_hat: solver hit iteration cap");

    MinMaxFit fit;
    fit.coef = res.w;
    fit.iterations = res.iterations;
    fit.residual_l1 = res.l1_norm;
    fit.gram_degenerate = gram_degenerate(sys.M);
    const InnerMax im = inner_max_mis(sys, fit.coef, 1.0);  // test directions on the unit ball
    fit.inner_max_value = im.value;
    fit.dual_certificate = im.direction;
    return fit;
}

PopulationEvaluator::PopulationEvaluator(const TabularConfoundedMDP& env, int t_len)
    : env_(&env),
      marg_(exact_step_marginals(env, t_len)),
      code_(env.k),
      propensity_(env.marginal_propensity()),
      gamma_(env.gamma) {}

double PopulationEvaluator::weight(int s, int z, int a, const Policy& pi, const Nuisance& nuisance,
                                   WeightMode mode) const {
    const double pi_a = pi.probs(static_cast<double>(s))[a];
    if (mode == WeightMode::Naive) return pi_a / propensity_(s, a);
    return code_.inner(z, a) * pi_a /
           (nuisance.delta(static_cast<double>(s), a) * nuisance.theta(static_cast<double>(s), z));
}

double PopulationEvaluator::phi_vf(const Policy& pi, const Fn& v, const Fn& g,
                                   const Nuisance& nuisance, WeightMode mode) const {
    double acc = 0.0;
    for (int s = 0; s < env_->n_s; ++s)
        for (int z = 0; z < env_->k; ++z)
            for (int u = 0; u < env_->n_u; ++u)
                for (int a = 0; a < env_->k; ++a) {
                    const double rho = weight(s, z, a, pi, nuisance, mode);
                    for (int sn = 0; sn < env_->n_s; ++sn) {
                        const double p = marg_.at(s, z, u, a, sn);
                        if (p == 0.0) continue;
                        const double target =
                            rho * (env_->r_at(s, u, a) + gamma_ * v(static_cast<double>(sn))) -
                            v(static_cast<double>(s));
                        acc += p * g(static_cast<double>(s)) * target;
                    }
                }
    return acc;
}

double PopulationEvaluator::phi_mis(const Policy& pi, const Fn& w, const Fn& f,
                                    const Nuisance& nuisance, WeightMode mode) const {
    double nu_side = 0.0;
    for (int s = 0; s < env_->n_s; ++s)
        nu_side += env_->nu[s] * f(static_cast<double>(s));
    nu_side *= (1.0 - gamma_);

    double acc = 0.0;
    for (int s = 0; s < env_->n_s; ++s)
        for (int z = 0; z < env_->k; ++z)
            for (int u = 0; u < env_->n_u; ++u)
                for (int a = 0; a < env_->k; ++a) {
                    const double rho = weight(s, z, a, pi, nuisance, mode);
                    for (int sn = 0; sn < env_->n_s; ++sn) {
                        const double p = marg_.at(s, z, u, a, sn);
                        if (p == 0.0) continue;
                        acc += p * rho * w(static_cast<double>(s)) *
                               (f(static_cast<double>(s)) - gamma_ * f(static_cast<double>(sn)));
                    }
                }
    return nu_side - acc;
}

double PopulationEvaluator::l_mis(const Policy& pi, const Fn& w, const Nuisance& nuisance,
                                  WeightMode mode) const {
    double acc = 0.0;
    for (int s = 0; s < env_->n_s; ++s)
        for (int z = 0; z < env_->k; ++z)
            for (int u = 0; u < env_->n_u; ++u)
                for (int a = 0; a < env_->k; ++a) {
                    const double rho = weight(s, z, a, pi, nuisance, mode);
                    for (int sn = 0; sn < env_->n_s; ++sn) {
                        const double p = marg_.at(s, z, u, a, sn);
                        if (p == 0.0) continue;
                        acc += p * rho * w(static_cast<double>(s)) * env_->r_at(s, u, a);
                    }
                }
    return acc;
}

double PopulationEvaluator::l_dr(const Policy& pi, const Fn& w, const Fn& v,
                                 const Nuisance& nuisance, WeightMode mode) const {
    double nu_side = 0.0;
    for (int s = 0; s < env_->n_s; ++s)
        nu_side += env_->nu[s] * v(static_cast<double>(s));
    nu_side *= (1.0 - gamma_);

    double acc = 0.0;
    for (int s = 0; s < env_->n_s; ++s)
        for (int z = 0; z < env_->k; ++z)
            for (int u = 0; u < env_->n_u; ++u)
                for (int a = 0; a < env_->k; ++a) {
                    const double rho = weight(s, z, a, pi, nuisance, mode);
                    for (int sn = 0; sn < env_->n_s; ++sn) {
                        const double p = marg_.at(s, z, u, a, sn);
                        if (p == 0.0) continue;
                        acc += p * rho * w(static_cast<double>(s)) *
                               (env_->r_at(s, u, a) + gamma_ * v(static_cast<double>(sn)) -
                                v(static_cast<double>(s)));
                    }
                }
    return acc + nu_side;
}

VfSystem build_vf_system_pop(const PopulationEvaluator& pop, const Policy& pi,
                             const FeatureMap& map, const Nuisance& nuisance, WeightMode mode) {
    const TabularConfoundedMDP& env = pop.env();
    const StepMarginals& marg = pop.marginals();
    const SimplexCode code(env.k);
    const Eigen::MatrixXd prop = env.marginal_propensity();
    const int d = map.dim();

    std::vector<Eigen::VectorXd> psi(static_cast<std::size_t>(env.n_s));
    for (int s = 0; s < env.n_s; ++s) psi[static_cast<std::size_t>(s)] = map.eval(s);

    VfSystem sys;
    sys.A = Eigen::MatrixXd::Zero(d, d);
    sys.c = Eigen::VectorXd::Zero(d);
    for (int s = 0; s < env.n_s; ++s)
        for (int z = 0; z < env.k; ++z)
            for (int u = 0; u < env.n_u; ++u)
                for (int a = 0; a < env.k; ++a) {
                    const double pi_a = pi.probs(static_cast<double>(s))[a];
                    const double rho =
                        mode == WeightMode::Iv
                            ? code.inner(z, a) * pi_a /
                                  (nuisance.delta(s, a) * nuisance.theta(s, z))
                            : pi_a / prop(s, a);
                    for (int sn = 0; sn < env.n_s; ++sn) {
                        const double p = marg.at(s, z, u, a, sn);
                        if (p == 0.0) continue;
                        sys.A.noalias() +=
                            p * psi[static_cast<std::size_t>(s)] *
                            (env.gamma * rho * psi[static_cast<std::size_t>(sn)] -
                             psi[static_cast<std::size_t>(s)])
                                .transpose();
                        sys.c.noalias() +=
                            p * rho * env.r_at(s, u, a) * psi[static_cast<std::size_t>(s)];
                    }
                }
    return sys;
}

MisSystem build_mis_system_pop(const PopulationEvaluator& pop, const Policy& pi,
                               const FeatureMap& map, const Nuisance& nuisance,
                               const Eigen::VectorXd& qnu, WeightMode mode) {
    const TabularConfoundedMDP& env = pop.env();
    const StepMarginals& marg = pop.marginals();
    const SimplexCode code(env.k);
    const Eigen::MatrixXd prop = env.marginal_propensity();
    const int d = map.dim();

    std::vector<Eigen::VectorXd> psi(static_cast<std::size_t>(env.n_s));
    for (int s = 0; s < env.n_s; ++s) psi[static_cast<std::size_t>(s)] = map.eval(s);

    MisSystem sys;
    sys.M = Eigen::MatrixXd::Zero(d, d);
    sys.ell = Eigen::VectorXd::Zero(d);
    sys.mbar = qnu;
    for (int s = 0; s < env.n_s; ++s)
        for (int z = 0; z < env.k; ++z)
            for (int u = 0; u < env.n_u; ++u)
                for (int a = 0; a < env.k; ++a) {
                    const double pi_a = pi.probs(static_cast<double>(s))[a];
                    const double rho =
                        mode == WeightMode::Iv
                            ? code.inner(z, a) * pi_a /
                                  (nuisance.delta(s, a) * nuisance.theta(s, z))
                            : pi_a / prop(s, a);
                    for (int sn = 0; sn < env.n_s; ++sn) {
                        const double p = marg.at(s, z, u, a, sn);
                        if (p == 0.0) continue;
                        sys.M.noalias() +=
                            p * rho *
                            (psi[static_cast<std::size_t>(s)] -
                             env.gamma * psi[static_cast<std::size_t>(sn)]) *
                            psi[static_cast<std::size_t>(s)].transpose();
                        sys.ell.noalias() +=
                            p * rho * env.r_at(s, u, a) * psi[static_cast<std::size_t>(s)];
                    }
                }
    return sys;
}

double rollout_value_is(const SampleCache& cache, const Policy& pi, double s0_bucket, double gamma,
                        WeightMode mode) {
    const Eigen::VectorXd rho = rho_weights(cache, pi, mode);
    const int t_len = cache.t_len;
    double acc = 0.0;
    int count = 0;
    for (int i = 0; i < cache.n_traj; ++i) {
        if (std::abs(cache.s[i * t_len] - s0_bucket) > 1e-9) continue;
        double ret = 0.0, g = 1.0, prod = 1.0;
        for (int t = 0; t < t_len; ++t) {
            const int idx = i * t_len + t;
            prod *= rho[idx];
            ret += g * cache.r[idx] * prod;
            g *= gamma;
        }
        acc += ret;
        ++count;
    }
    if (count == 0) throw std::runtime_error("rollout_value_is: empty initial-state bucket");
    return acc / static_cast<double>(count);
}

}  // namespace ivrl
