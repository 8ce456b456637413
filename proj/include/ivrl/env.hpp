#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "ivrl/dataset.hpp"
#include "ivrl/policy.hpp"
#include "ivrl/rng.hpp"

namespace ivrl {

// Finite confounded MDP. Observed states are indices 0..n_s-1 (handed to
// feature maps as doubles), hidden confounders 0..n_u-1, actions and
// instruments 0..k-1. Data are generated per step as
//   U ~ p_u(.|s), Z ~ theta(s,.), A ~ behavior(.|s,u,z), S' ~ trans(.|s,u,a),
//   R = reward(s,u,a),
// with the confounder redrawn independently each step (memorylessness).
class TabularConfoundedMDP {
  public:
    int n_s = 0;
    int n_u = 0;
    int k = 0;
    Eigen::MatrixXd p_u;              // n_s x n_u
    Eigen::MatrixXd theta;            // n_s x k, instrument law
    std::vector<double> behavior;     // b(a|s,u,z), index via b_at
    std::vector<double> trans;        // P(s'|s,u,a), index via p_at
    std::vector<double> reward;       // r(s,u,a), index via r_at
    Eigen::VectorXd zeta;             // behavior initial law
    Eigen::VectorXd nu;               // reference initial law
    double gamma = 0.9;

    double b_at(int s, int u, int z, int a) const {
        return behavior[static_cast<std::size_t>(((s * n_u + u) * k + z) * k + a)];
    }
    double& b_at(int s, int u, int z, int a) {
        return behavior[static_cast<std::size_t>(((s * n_u + u) * k + z) * k + a)];
    }
    double p_at(int s, int u, int a, int sn) const {
        return trans[static_cast<std::size_t>(((s * n_u + u) * k + a) * n_s + sn)];
    }
    double& p_at(int s, int u, int a, int sn) {
        return trans[static_cast<std::size_t>(((s * n_u + u) * k + a) * n_s + sn)];
    }
    double r_at(int s, int u, int a) const {
        return reward[static_cast<std::size_t>((s * n_u + u) * k + a)];
    }
    double& r_at(int s, int u, int a) {
        return reward[static_cast<std::size_t>((s * n_u + u) * k + a)];
    }

    void allocate();

    // throws on non-stochastic tables, theta rows without a positive floor,
    // or u-dependent compliance
    void validate() const;

    // compliance Delta*(s,a) = b(a|s,u,a) - avg_{z != a} b(a|s,u,z), u-invariant
    Eigen::MatrixXd delta_star() const;

    // P~(s'|s,a) = sum_u p_u(u|s) P(s'|s,u,a); r~(s,a) likewise
    Eigen::MatrixXd marginal_trans(int a) const;
    Eigen::MatrixXd marginal_reward() const;

    // state kernel of the behavior process, with b coupled to u
    Eigen::MatrixXd behavior_state_kernel() const;

    // marginal logging propensity p_b(a|s)
    Eigen::MatrixXd marginal_propensity() const;
};

// Observed-state transition kernel under a policy acting on s only.
Eigen::MatrixXd policy_state_kernel(const TabularConfoundedMDP& env, const Policy& pi);

// Continuous-state environment from the kidney transplantation simulation:
//   R = -S^2 + (U - u_mean) * (A - 1),
//   S' = S + 0.5 * (A - 1) + 3 * 1{S > 0} * (U - u_mean),
// ternary actions/instruments, an instrument law keyed on the state region,
// and a two-branch behavior table keyed on the confounder.
class KidneyEnv {
  public:
    double gamma = 0.9;
    double u_mean = 2.0;
    double u_sd = 0.31622776601683794;  // N(2, 0.1) read as variance 0.1
    double s0_mean = 5.0;
    double s0_sd = 0.31622776601683794;
    static constexpr int kActions = 3;

    Eigen::Vector3d iv_row(double s) const {
        if (s < -0.3) return {0.1, 0.1, 0.8};
        if (s > 0.3) return {0.8, 0.1, 0.1};
        return {0.1, 0.8, 0.1};
    }

    Eigen::Vector3d behavior_row(double u, int z) const {
        static const double hi[3][3] = {{0.8, 0.1, 0.1}, {0.1, 0.8, 0.1}, {0.1, 0.1, 0.8}};
        static const double lo[3][3] = {{0.78, 0.11, 0.11}, {0.05, 0.78, 0.17}, {0.11, 0.05, 0.84}};
        const auto& row = (u > u_mean) ? hi[z] : lo[z];
        return {row[0], row[1], row[2]};
    }

    double reward_fn(double s, double u, int a) const {
        return -s * s + (u - u_mean) * (a - 1);
    }
    double next_state(double s, double u, int a) const {
        return s + 0.5 * (a - 1) + 3.0 * (s > 0.0 ? 1.0 : 0.0) * (u - u_mean);
    }

    // oracle compliance; constant 0.70 for this environment's tables
    double delta_star(double /*s*/, int a) const;
    double theta_star(double s, int z) const { return iv_row(s)[z]; }

    // logging propensity marginalized over the confounder branch (each
    // branch has probability exactly 1/2) and the instrument
    Eigen::Vector3d propensity(double s) const;

    // seeded sample of 1e4 initial states standing in for the reference
    // measure nu
    std::vector<double> nu_sample(std::uint64_t seed = kDefaultNuSeed, int count = 10000) const;

    static constexpr std::uint64_t kDefaultNuSeed = 902114;
};

Dataset generate(const TabularConfoundedMDP& env, int n, int t_len, std::uint64_t seed,
                 bool blinded = true);
Dataset generate(const KidneyEnv& env, int n, int t_len, std::uint64_t seed, bool blinded = true);

// V^pi from the marginalized Bellman system (exact linear solve)
Eigen::VectorXd exact_value(const TabularConfoundedMDP& env, const Policy& pi);

// w^pi(s) = d^pi(s) / d^b(s); throws when the behavior data leave a
// pi-visited state uncovered
Eigen::VectorXd exact_ratio(const TabularConfoundedMDP& env, const Policy& pi, int t_len);

double true_j(const TabularConfoundedMDP& env, const Policy& pi);

struct MonteCarloValue {
    double mean = 0.0;
    double se = 0.0;
    int rollouts = 0;
    int horizon = 0;
};
MonteCarloValue true_j(const KidneyEnv& env, const Policy& pi, int rollouts, std::uint64_t seed,
                       int horizon = 0);
// expected total reward of the logging process itself
MonteCarloValue behavior_j(const KidneyEnv& env, int rollouts, std::uint64_t seed, int horizon = 0);

// time-averaged joint law of (S_t, Z_t, U_t, A_t, S_{t+1}) under the
// behavior process started from zeta
struct StepMarginals {
    int n_s = 0, n_u = 0, k = 0;
    Eigen::VectorXd avg_state;  // (1/T) sum_t p_t^b
    std::vector<double> joint;  // indexed (s,z,u,a,s')

    double at(int s, int z, int u, int a, int sn) const {
        return joint[static_cast<std::size_t>((((s * k + z) * n_u + u) * k + a) * n_s + sn)];
    }
    double& at(int s, int z, int u, int a, int sn) {
        return joint[static_cast<std::size_t>((((s * k + z) * n_u + u) * k + a) * n_s + sn)];
    }
};
StepMarginals exact_step_marginals(const TabularConfoundedMDP& env, int t_len);

struct BestPolicy {
    TabularPolicy policy;
    double j = 0.0;
};
// exhaustive search over deterministic observed-state policies
BestPolicy best_in_class(const TabularConfoundedMDP& env);

// Seeded generator of valid confounded MDPs; compliance holds by
// construction (behavior = (1 - delta) * mix(a|s,u) + delta * 1{z == a}).
struct RandomTabularSpec {
    int n_s = 3;
    int n_u = 2;
    int k = 3;
    double gamma = 0.9;
    double delta_lo = 0.3;
    double delta_hi = 0.7;
};
TabularConfoundedMDP random_tabular(const RandomTabularSpec& spec, std::uint64_t seed);

// fixed 3-state fixture used across tests and the self-check suite
TabularConfoundedMDP fixture_tabular();

}  // namespace ivrl
