#include "ivrl/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace ivrl {

namespace {

void check_row(double sum, double min_p, const char* what) {
    if (std::abs(sum - 1.0) > 1e-12)
        throw std::invalid_argument(std::string(what) + ": row not stochastic");
    if (min_p < -1e-15) throw std::invalid_argument(std::string(what) + ": negative probability");
}

}  // namespace

void TabularConfoundedMDP::allocate() {
    p_u = Eigen::MatrixXd::Zero(n_s, n_u);
    theta = Eigen::MatrixXd::Zero(n_s, k);
    behavior.assign(static_cast<std::size_t>(n_s * n_u * k * k), 0.0);
    trans.assign(static_cast<std::size_t>(n_s * n_u * k * n_s), 0.0);
    reward.assign(static_cast<std::size_t>(n_s * n_u * k), 0.0);
    zeta = Eigen::VectorXd::Zero(n_s);
    nu = Eigen::VectorXd::Zero(n_s);
}

void TabularConfoundedMDP::validate() const {
    if (n_s < 1 || n_u < 1 || k < 2)
        throw std::invalid_argument("TabularConfoundedMDP: need n_s >= 1, n_u >= 1, k >= 2");
    if (!(gamma > 0.0 && gamma < 1.0))
        throw std::invalid_argument("TabularConfoundedMDP: gamma must be in (0,1)");
    for (int s = 0; s < n_s; ++s) {
        check_row(p_u.row(s).sum(), p_u.row(s).minCoeff(), "p_u");
        check_row(theta.row(s).sum(), theta.row(s).minCoeff(), "theta");
        if (theta.row(s).minCoeff() <= 0.0)
            throw std::invalid_argument("theta: instrument law must be bounded away from zero");
        for (int u = 0; u < n_u; ++u) {
            for (int z = 0; z < k; ++z) {
                double sum = 0.0, mn = 1.0;
                for (int a = 0; a < k; ++a) {
                    sum += b_at(s, u, z, a);
                    mn = std::min(mn, b_at(s, u, z, a));
                }
                check_row(sum, mn, "behavior");
            }
            for (int a = 0; a < k; ++a) {
                double sum = 0.0, mn = 1.0;
                for (int sn = 0; sn < n_s; ++sn) {
                    sum += p_at(s, u, a, sn);
                    mn = std::min(mn, p_at(s, u, a, sn));
                }
                check_row(sum, mn, "trans");
            }
        }
    }
    check_row(zeta.sum(), zeta.minCoeff(), "zeta");
    check_row(nu.sum(), nu.minCoeff(), "nu");
    delta_star();  // throws if compliance depends on u
}

Eigen::MatrixXd TabularConfoundedMDP::delta_star() const {
    Eigen::MatrixXd delta(n_s, k);
    for (int s = 0; s < n_s; ++s) {
        for (int a = 0; a < k; ++a) {
            double ref = 0.0;
            for (int u = 0; u < n_u; ++u) {
                double off = 0.0;
                for (int z = 0; z < k; ++z)
                    if (z != a) off += b_at(s, u, z, a);
                const double d = b_at(s, u, a, a) - off / static_cast<double>(k - 1);
                if (u == 0)
                    ref = d;
                else if (std::abs(d - ref) > 1e-10)
                    throw std::invalid_argument(
                        "TabularConfoundedMDP: compliance depends on the confounder at state " +
                        std::to_string(s));
            }
            delta(s, a) = ref;
        }
    }
    return delta;
}

Eigen::MatrixXd TabularConfoundedMDP::marginal_trans(int a) const {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n_s, n_s);
    for (int s = 0; s < n_s; ++s)
        for (int u = 0; u < n_u; ++u)
            for (int sn = 0; sn < n_s; ++sn) p(s, sn) += p_u(s, u) * p_at(s, u, a, sn);
    return p;
}

Eigen::MatrixXd TabularConfoundedMDP::marginal_reward() const {
    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(n_s, k);
    for (int s = 0; s < n_s; ++s)
        for (int a = 0; a < k; ++a)
            for (int u = 0; u < n_u; ++u) r(s, a) += p_u(s, u) * r_at(s, u, a);
    return r;
}

Eigen::MatrixXd TabularConfoundedMDP::behavior_state_kernel() const {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n_s, n_s);
    for (int s = 0; s < n_s; ++s)
        for (int z = 0; z < k; ++z)
            for (int u = 0; u < n_u; ++u)
                for (int a = 0; a < k; ++a) {
                    const double w = theta(s, z) * p_u(s, u) * b_at(s, u, z, a);
                    for (int sn = 0; sn < n_s; ++sn) p(s, sn) += w * p_at(s, u, a, sn);
                }
    return p;
}

Eigen::MatrixXd TabularConfoundedMDP::marginal_propensity() const {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n_s, k);
    for (int s = 0; s < n_s; ++s)
        for (int z = 0; z < k; ++z)
            for (int u = 0; u < n_u; ++u)
                for (int a = 0; a < k; ++a)
                    p(s, a) += theta(s, z) * p_u(s, u) * b_at(s, u, z, a);
    return p;
}

Eigen::MatrixXd policy_state_kernel(const TabularConfoundedMDP& env, const Policy& pi) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(env.n_s, env.n_s);
    for (int s = 0; s < env.n_s; ++s) {
        const Eigen::VectorXd probs = pi.probs(static_cast<double>(s));
        for (int a = 0; a < env.k; ++a) p.row(s) += probs[a] * env.marginal_trans(a).row(s);
    }
    return p;
}

double KidneyEnv::delta_star(double /*s*/, int a) const {
    // contrast of the behavior table rows; identical across branches
    const Eigen::Vector3d hi0 = behavior_row(u_mean + 1.0, 0), hi1 = behavior_row(u_mean + 1.0, 1),
                          hi2 = behavior_row(u_mean + 1.0, 2);
    const Eigen::Vector3d rows[3] = {hi0, hi1, hi2};
    double off = 0.0;
    for (int z = 0; z < 3; ++z)
        if (z != a) off += rows[z][a];
    return rows[a][a] - off / 2.0;
}

Eigen::Vector3d KidneyEnv::propensity(double s) const {
    const Eigen::Vector3d th = iv_row(s);
    Eigen::Vector3d p = Eigen::Vector3d::Zero();
    for (int z = 0; z < 3; ++z)
        p += th[z] * 0.5 * (behavior_row(u_mean + 1.0, z) + behavior_row(u_mean - 1.0, z));
    return p;
}

std::vector<double> KidneyEnv::nu_sample(std::uint64_t seed, int count) const {
    Rng rng(derive_seed(seed, {kStreamNu}));
    std::vector<double> out(static_cast<std::size_t>(count));
    for (auto& v : out) v = rng.normal(s0_mean, s0_sd);
    return out;
}

Dataset generate(const TabularConfoundedMDP& env, int n, int t_len, std::uint64_t seed,
                 bool blinded) {
    if (n < 1 || t_len < 1) throw std::invalid_argument("generate: need n >= 1 and t_len >= 1");
    env.validate();

    Dataset data;
    data.seed = seed;
    data.trajectories.resize(static_cast<std::size_t>(n));
    std::vector<double> row(
        static_cast<std::size_t>(std::max(env.n_s, std::max(env.k, env.n_u))));

    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, {kStreamData, static_cast<std::uint64_t>(i)}));
        auto& traj = data.trajectories[static_cast<std::size_t>(i)];
        traj.resize(static_cast<std::size_t>(t_len));

        int s = rng.categorical({env.zeta.data(), static_cast<std::size_t>(env.n_s)});
        for (int t = 0; t < t_len; ++t) {
            // Eigen rows are strided views; copy to contiguous buffers
            for (int u2 = 0; u2 < env.n_u; ++u2) row[static_cast<std::size_t>(u2)] = env.p_u(s, u2);
            const int u = rng.categorical({row.data(), static_cast<std::size_t>(env.n_u)});
            for (int z = 0; z < env.k; ++z) row[static_cast<std::size_t>(z)] = env.theta(s, z);
            const int z = rng.categorical({row.data(), static_cast<std::size_t>(env.k)});
            for (int a = 0; a < env.k; ++a)
                row[static_cast<std::size_t>(a)] = env.b_at(s, u, z, a);
            const int a = rng.categorical({row.data(), static_cast<std::size_t>(env.k)});
            for (int sn = 0; sn < env.n_s; ++sn)
                row[static_cast<std::size_t>(sn)] = env.p_at(s, u, a, sn);
            const int sn = rng.categorical({row.data(), static_cast<std::size_t>(env.n_s)});

            auto& st = traj[static_cast<std::size_t>(t)];
            st.s = static_cast<double>(s);
            st.z = z;
            st.a = a;
            st.r = env.r_at(s, u, a);
            st.s_next = static_cast<double>(sn);
            if (!blinded) st.u_diag = static_cast<double>(u);
            s = sn;
        }
    }
    return data;
}

Dataset generate(const KidneyEnv& env, int n, int t_len, std::uint64_t seed, bool blinded) {
    if (n < 1 || t_len < 1) throw std::invalid_argument("generate: need n >= 1 and t_len >= 1");

    Dataset data;
    data.seed = seed;
    data.trajectories.resize(static_cast<std::size_t>(n));

    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, {kStreamData, static_cast<std::uint64_t>(i)}));
        auto& traj = data.trajectories[static_cast<std::size_t>(i)];
        traj.resize(static_cast<std::size_t>(t_len));

        double s = rng.normal(env.s0_mean, env.s0_sd);
        for (int t = 0; t < t_len; ++t) {
            const double u = rng.normal(env.u_mean, env.u_sd);
            const Eigen::Vector3d th = env.iv_row(s);
            const int z = rng.categorical({th.data(), 3});
            const Eigen::Vector3d brow = env.behavior_row(u, z);
            const int a = rng.categorical({brow.data(), 3});

            auto& st = traj[static_cast<std::size_t>(t)];
            st.s = s;
            st.z = z;
            st.a = a;
            st.r = env.reward_fn(s, u, a);
            st.s_next = env.next_state(s, u, a);
            if (!blinded) st.u_diag = u;
            s = st.s_next;
        }
    }
    return data;
}

Eigen::VectorXd exact_value(const TabularConfoundedMDP& env, const Policy& pi) {
    const Eigen::MatrixXd p_pi = policy_state_kernel(env, pi);
    const Eigen::MatrixXd r = env.marginal_reward();
    Eigen::VectorXd r_pi(env.n_s);
    for (int s = 0; s < env.n_s; ++s)
        r_pi[s] = r.row(s).dot(pi.probs(static_cast<double>(s)).transpose());

    const Eigen::MatrixXd sys = Eigen::MatrixXd::Identity(env.n_s, env.n_s) - env.gamma * p_pi;
    const Eigen::VectorXd v = sys.partialPivLu().solve(r_pi);
    if ((sys * v - r_pi).lpNorm<Eigen::Infinity>() > 1e-10)
        throw std::runtime_error("exact_value: Bellman solve failed residual check");
    return v;
}

Eigen::VectorXd exact_ratio(const TabularConfoundedMDP& env, const Policy& pi, int t_len) {
    if (t_len < 1) throw std::invalid_argument("exact_ratio: t_len >= 1 required");

    const Eigen::MatrixXd pt_pi = policy_state_kernel(env, pi).transpose();
    Eigen::VectorXd d_pi = Eigen::VectorXd::Zero(env.n_s);
    {
        Eigen::VectorXd p = env.nu;
        double g = 1.0;
        while (g > 1e-15) {
            d_pi += (1.0 - env.gamma) * g * p;
            p = pt_pi * p;
            g *= env.gamma;
        }
    }

    const Eigen::MatrixXd pt_b = env.behavior_state_kernel().transpose();
    Eigen::VectorXd d_b = Eigen::VectorXd::Zero(env.n_s);
    {
        Eigen::VectorXd p = env.zeta;
        for (int t = 0; t < t_len; ++t) {
            d_b += p;
            if (t + 1 < t_len) p = pt_b * p;
        }
        d_b /= static_cast<double>(t_len);
    }

    Eigen::VectorXd w(env.n_s);
    for (int s = 0; s < env.n_s; ++s) {
        if (d_b[s] <= 1e-14) {
            if (d_pi[s] > 1e-12)
                throw std::runtime_error("exact_ratio: state " + std::to_string(s) +
                                         " visited by the target policy but not by the data");
            w[s] = 0.0;
        } else {
            w[s] = d_pi[s] / d_b[s];
        }
    }
    return w;
}

double true_j(const TabularConfoundedMDP& env, const Policy& pi) {
    return (1.0 - env.gamma) * env.nu.dot(exact_value(env, pi));
}

namespace {

MonteCarloValue kidney_rollouts(const KidneyEnv& env, const Policy* pi, int rollouts,
                                std::uint64_t seed, int horizon) {
    if (rollouts < 2) throw std::invalid_argument("kidney rollouts: need at least 2");
    int h = horizon > 0 ? horizon
                        : static_cast<int>(std::ceil(std::log(1e-4) / std::log(env.gamma)));

    for (int attempt = 0; attempt < 6; ++attempt) {
        double sum = 0.0, sumsq = 0.0;
        std::vector<double> probs(3);
        for (int i = 0; i < rollouts; ++i) {
            Rng rng(derive_seed(seed, {kStreamEval, static_cast<std::uint64_t>(i)}));
            double s = rng.normal(env.s0_mean, env.s0_sd);
            double ret = 0.0, g = 1.0;
            for (int t = 0; t < h; ++t) {
                const double u = rng.normal(env.u_mean, env.u_sd);
                int a;
                if (pi != nullptr) {
                    const Eigen::VectorXd ap = pi->probs(s);
                    for (int j = 0; j < 3; ++j) probs[static_cast<std::size_t>(j)] = ap[j];
                    a = rng.categorical({probs.data(), 3});
                } else {
                    const Eigen::Vector3d th = env.iv_row(s);
                    const int z = rng.categorical({th.data(), 3});
                    const Eigen::Vector3d brow = env.behavior_row(u, z);
                    a = rng.categorical({brow.data(), 3});
                }
                ret += g * env.reward_fn(s, u, a);
                s = env.next_state(s, u, a);
                g *= env.gamma;
            }
            ret *= (1.0 - env.gamma);
            sum += ret;
            sumsq += ret * ret;
        }
        MonteCarloValue mc;
        mc.rollouts = rollouts;
        mc.horizon = h;
        mc.mean = sum / rollouts;
        const double var = std::max(0.0, (sumsq - sum * sum / rollouts) / (rollouts - 1));
        mc.se = std::sqrt(var / rollouts);

        // truncation bias must stay below 1% of the estimate scale
        const double tail = std::pow(env.gamma, h) / (1.0 - env.gamma);
        if (horizon > 0 || tail < 0.01 * std::max(1e-6, std::abs(mc.mean))) return mc;
        h *= 2;
    }
    throw std::runtime_error("kidney rollouts: horizon did not satisfy the tail bound");
}

}  // namespace

MonteCarloValue true_j(const KidneyEnv& env, const Policy& pi, int rollouts, std::uint64_t seed,
                       int horizon) {
    return kidney_rollouts(env, &pi, rollouts, seed, horizon);
}

MonteCarloValue behavior_j(const KidneyEnv& env, int rollouts, std::uint64_t seed, int horizon) {
    return kidney_rollouts(env, nullptr, rollouts, seed, horizon);
}

StepMarginals exact_step_marginals(const TabularConfoundedMDP& env, int t_len) {
    if (t_len < 1) throw std::invalid_argument("exact_step_marginals: t_len >= 1 required");
    StepMarginals m;
    m.n_s = env.n_s;
    m.n_u = env.n_u;
    m.k = env.k;

    const Eigen::MatrixXd pt_b = env.behavior_state_kernel().transpose();
    Eigen::VectorXd p = env.zeta;
    m.avg_state = Eigen::VectorXd::Zero(env.n_s);
    for (int t = 0; t < t_len; ++t) {
        m.avg_state += p;
        if (t + 1 < t_len) p = pt_b * p;
    }
    m.avg_state /= static_cast<double>(t_len);

    m.joint.assign(static_cast<std::size_t>(env.n_s * env.k * env.n_u * env.k * env.n_s), 0.0);
    for (int s = 0; s < env.n_s; ++s)
        for (int z = 0; z < env.k; ++z)
            for (int u = 0; u < env.n_u; ++u)
                for (int a = 0; a < env.k; ++a) {
                    const double w =
                        m.avg_state[s] * env.theta(s, z) * env.p_u(s, u) * env.b_at(s, u, z, a);
                    for (int sn = 0; sn < env.n_s; ++sn)
                        m.at(s, z, u, a, sn) = w * env.p_at(s, u, a, sn);
                }
    return m;
}

BestPolicy best_in_class(const TabularConfoundedMDP& env) {
    if (env.n_s > 12 || env.k > 4)
        throw std::invalid_argument("best_in_class: exhaustive search limited to n_s <= 12, k <= 4");
    double combos = std::pow(static_cast<double>(env.k), env.n_s);
    if (combos > 2.1e6) throw std::invalid_argument("best_in_class: policy count above limit");

    std::vector<int> action(static_cast<std::size_t>(env.n_s), 0);
    std::vector<int> best_action = action;
    double best_j = -std::numeric_limits<double>::infinity();

    const long total = static_cast<long>(combos);
    for (long idx = 0; idx < total; ++idx) {
        long rem = idx;
        for (int s = 0; s < env.n_s; ++s) {
            action[static_cast<std::size_t>(s)] = static_cast<int>(rem % env.k);
            rem /= env.k;
        }
        const TabularPolicy pi = TabularPolicy::deterministic(env.n_s, env.k, action);
        const double j = true_j(env, pi);
        if (j > best_j) {  // strict: first (lexicographically smallest) maximizer wins
            best_j = j;
            best_action = action;
        }
    }
    return BestPolicy{TabularPolicy::deterministic(env.n_s, env.k, best_action), best_j};
}

TabularConfoundedMDP random_tabular(const RandomTabularSpec& spec, std::uint64_t seed) {
    TabularConfoundedMDP env;
    env.n_s = spec.n_s;
    env.n_u = spec.n_u;
    env.k = spec.k;
    env.gamma = spec.gamma;
    env.allocate();

    Rng rng(derive_seed(seed, {0x7ab5u}));
    auto fill_simplex = [&](auto setter, int len, double lo) {
        std::vector<double> v(static_cast<std::size_t>(len));
        double sum = 0.0;
        for (auto& x : v) {
            x = rng.uniform(lo, 1.0);
            sum += x;
        }
        for (int i = 0; i < len; ++i) setter(i, v[static_cast<std::size_t>(i)] / sum);
    };

    for (int s = 0; s < env.n_s; ++s) {
        fill_simplex([&](int u, double x) { env.p_u(s, u) = x; }, env.n_u, 0.2);
        fill_simplex([&](int z, double x) { env.theta(s, z) = x; }, env.k, 0.3);

        const double delta = rng.uniform(spec.delta_lo, spec.delta_hi);
        for (int u = 0; u < env.n_u; ++u) {
            // mixing row shared across z; compliance shifts mass to a == z
            std::vector<double> mix(static_cast<std::size_t>(env.k));
            double msum = 0.0;
            for (auto& x : mix) {
                x = rng.uniform(0.1, 1.0);
                msum += x;
            }
            for (auto& x : mix) x /= msum;
            for (int z = 0; z < env.k; ++z)
                for (int a = 0; a < env.k; ++a)
                    env.b_at(s, u, z, a) =
                        (1.0 - delta) * mix[static_cast<std::size_t>(a)] + (z == a ? delta : 0.0);

            for (int a = 0; a < env.k; ++a)
                fill_simplex([&](int sn, double x) { env.p_at(s, u, a, sn) = x; }, env.n_s, 0.05);
            for (int a = 0; a < env.k; ++a) env.r_at(s, u, a) = rng.uniform(-1.0, 1.0);
        }
    }

    Eigen::VectorXd zeta(env.n_s), nu(env.n_s);
    {
        double zs = 0.0, ns = 0.0;
        for (int s = 0; s < env.n_s; ++s) {
            zeta[s] = rng.uniform(0.2, 1.0);
            zs += zeta[s];
        }
        for (int s = 0; s < env.n_s; ++s) {
            nu[s] = rng.uniform(0.2, 1.0);
            ns += nu[s];
        }
        env.zeta = zeta / zs;
        env.nu = nu / ns;
    }

    env.validate();
    return env;
}

TabularConfoundedMDP fixture_tabular() {
    TabularConfoundedMDP env;
    env.n_s = 3;
    env.n_u = 2;
    env.k = 3;
    env.gamma = 0.9;
    env.allocate();

    env.p_u << 0.6, 0.4, 0.3, 0.7, 0.5, 0.5;
    env.theta << 0.5, 0.3, 0.2, 0.2, 0.5, 0.3, 0.3, 0.2, 0.5;

    const double delta[3] = {0.5, 0.6, 0.4};
    const double mix[3][2][3] = {
        {{0.5, 0.3, 0.2}, {0.1, 0.5, 0.4}},
        {{0.3, 0.4, 0.3}, {0.6, 0.2, 0.2}},
        {{0.2, 0.2, 0.6}, {0.4, 0.4, 0.2}},
    };
    for (int s = 0; s < 3; ++s)
        for (int u = 0; u < 2; ++u)
            for (int z = 0; z < 3; ++z)
                for (int a = 0; a < 3; ++a)
                    env.b_at(s, u, z, a) =
                        (1.0 - delta[s]) * mix[s][u][a] + (z == a ? delta[s] : 0.0);

    const double trans[3][2][3][3] = {
        {{{0.7, 0.2, 0.1}, {0.2, 0.6, 0.2}, {0.1, 0.3, 0.6}},
         {{0.5, 0.4, 0.1}, {0.3, 0.3, 0.4}, {0.2, 0.2, 0.6}}},
        {{{0.3, 0.5, 0.2}, {0.1, 0.7, 0.2}, {0.4, 0.1, 0.5}},
         {{0.2, 0.3, 0.5}, {0.5, 0.2, 0.3}, {0.3, 0.4, 0.3}}},
        {{{0.6, 0.1, 0.3}, {0.2, 0.2, 0.6}, {0.1, 0.5, 0.4}},
         {{0.4, 0.3, 0.3}, {0.6, 0.3, 0.1}, {0.2, 0.6, 0.2}}},
    };
    const double rew[3][2][3] = {
        {{0.8, -0.2, 0.1}, {0.4, -0.6, 0.3}},
        {{-0.1, 0.9, 0.2}, {0.3, 0.5, -0.4}},
        {{0.2, -0.3, 0.7}, {-0.5, 0.1, 0.9}},
    };
    for (int s = 0; s < 3; ++s)
        for (int u = 0; u < 2; ++u)
            for (int a = 0; a < 3; ++a) {
                env.r_at(s, u, a) = rew[s][u][a];
                for (int sn = 0; sn < 3; ++sn) env.p_at(s, u, a, sn) = trans[s][u][a][sn];
            }

    env.zeta << 0.5, 0.3, 0.2;
    env.nu << 0.2, 0.5, 0.3;
    env.validate();
    return env;
}

}  // namespace ivrl
