#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>

#include "ivrl/dataset.hpp"
#include "ivrl/env.hpp"
#include "ivrl/features.hpp"
#include "ivrl/lp.hpp"
#include "ivrl/nuisance.hpp"
#include "ivrl/policy.hpp"
#include "ivrl/simplex.hpp"

namespace ivrl {

// IV weight rho = (z . a) pi(a|s) / (Delta(s,a) Theta(s,z)); Naive swaps in
// the propensity ratio pi(a|s) / P(a|s) of the unconfounded pipeline.
enum class WeightMode { Iv, Naive };

struct IvWeight {
    double value = 0.0;
    double inner_za = 0.0;
    double pi_prob = 0.0;
    double delta = 0.0;
    double theta = 0.0;
};

IvWeight iv_weight(double s, int z, int a, const Policy& pi, const Nuisance& nuisance,
                   const SimplexCode& code);

// Flattened per-sample view of a dataset with features and nuisance values
// precomputed; policies vary per call, everything else is fixed.
struct SampleCache {
    int k = 0;
    int n_traj = 0;
    int t_len = 0;
    FeatureMap map{0};
    Eigen::VectorXd s, r, s_next;
    std::vector<int> z, a;
    Eigen::MatrixXd psi_s, psi_next;  // NT x d
    Eigen::VectorXd inner_za;
    Eigen::VectorXd theta_v, delta_v;
    Eigen::VectorXd prop_v;  // P(a|s) when a naive propensity is attached
    Eigen::MatrixXd gram_ss;  // psi_s^T psi_s / NT, policy-independent

    int total() const { return n_traj * t_len; }
    int dim() const { return map.dim(); }
};

SampleCache build_cache(const Dataset& data, const FeatureMap& map, const SimplexCode& code,
                        const Nuisance& nuisance);

using PropensityFn = std::function<double(double s, int a)>;
void attach_propensity(SampleCache& cache, const PropensityFn& prop);

// per-sample weights under a policy
Eigen::VectorXd rho_weights(const SampleCache& cache, const Policy& pi, WeightMode mode);

// ----- empirical systems ------------------------------------------------
//
// All empirical functionals are affine in the coefficient vectors, so each
// reduces to a small matrix/vector pair:
//   VF residual   b(w_v) = c + A w_v,   with Phi_vf(v, g) = g_coef . b(w_v)
//   MIS residual  m(w_w) = mbar - M w_w, with Phi_mis(w, f) = f_coef . m(w_w)
//   MIS value     L_mis(w_w) = ell . w_w
//   DR value      L_dr(w, v) = ell . w + w^T D v + qnu . v
// Sample means use per-trajectory partials combined by a pairwise tree sum,
// so results are identical no matter how trajectory scans are scheduled.

struct VfSystem {
    Eigen::MatrixXd A;
    Eigen::VectorXd c;
    Eigen::VectorXd residual(const Eigen::VectorXd& v_coef) const { return c + A * v_coef; }
};

struct MisSystem {
    Eigen::MatrixXd M;
    Eigen::VectorXd mbar;
    Eigen::VectorXd ell;
    Eigen::VectorXd residual(const Eigen::VectorXd& w_coef) const { return mbar - M * w_coef; }
};

// (1-gamma)-scaled mean feature vector of the reference measure
Eigen::VectorXd nu_feature_mean(const FeatureMap& map, const std::vector<double>& states,
                                const std::vector<double>& weights = {});

VfSystem build_vf_system(const SampleCache& cache, const Policy& pi, double gamma, WeightMode mode,
                         const Eigen::VectorXd* extra_reward = nullptr);
MisSystem build_mis_system(const SampleCache& cache, const Policy& pi, double gamma,
                           WeightMode mode, const Eigen::VectorXd& qnu);
Eigen::MatrixXd build_dr_coupling(const SampleCache& cache, const Policy& pi, double gamma,
                                  WeightMode mode);

// per-trajectory means of the residual contributions at fixed coefficients
// (rows index trajectories); feeds the bootstrap radius calibration
Eigen::MatrixXd vf_residual_parts(const SampleCache& cache, const Policy& pi, double gamma,
                                  WeightMode mode, const Eigen::VectorXd& v_coef);
Eigen::MatrixXd mis_residual_parts(const SampleCache& cache, const Policy& pi, double gamma,
                                   WeightMode mode, const Eigen::VectorXd& w_coef);

double phi_vf_hat(const SampleCache& cache, const Policy& pi, const LinearV& v,
                  const BoxedLinearW& g, double gamma, WeightMode mode = WeightMode::Iv);
double phi_mis_hat(const SampleCache& cache, const Policy& pi, const BoxedLinearW& w,
                   const LinearV& f, double gamma, const Eigen::VectorXd& qnu,
                   WeightMode mode = WeightMode::Iv);
double l_mis_hat(const SampleCache& cache, const Policy& pi, const BoxedLinearW& w,
                 WeightMode mode = WeightMode::Iv);
double l_dr_hat(const SampleCache& cache, const Policy& pi, const BoxedLinearW& w,
                const LinearV& v, double gamma, const Eigen::VectorXd& qnu,
                WeightMode mode = WeightMode::Iv);

// ----- inner maximization and min-max fits --------------------------------

struct InnerMax {
    double value = 0.0;
    Eigen::VectorXd direction;  // maximizing coefficients, box * sign(b)
    Eigen::VectorXd b;          // feature-averaged residuals
};

// closed form: value = box * ||b||_1, direction = box * sign(b), sign(0) = +1
InnerMax inner_max_vf(const VfSystem& sys, const Eigen::VectorXd& v_coef, double box);
InnerMax inner_max_mis(const MisSystem& sys, const Eigen::VectorXd& w_coef, double box);

struct MinMaxFit {
    Eigen::VectorXd coef;
    double inner_max_value = 0.0;
    Eigen::VectorXd dual_certificate;
    int iterations = 0;
    double residual_l1 = 0.0;
    bool gram_degenerate = false;  // warning: solution may be non-unique
};

enum class MinMaxBackend { Lp, Subgradient };

struct MinMaxConfig {
    double box = 1.0;  // bound of the test class (VF fit) or the W class (MIS fit)
    MinMaxBackend backend = MinMaxBackend::Lp;
};

MinMaxFit fit_v_hat(const VfSystem& sys, const MinMaxConfig& cfg = {});
MinMaxFit fit_w_hat(const MisSystem& sys, const MinMaxConfig& cfg = {});

// ----- population functionals (tabular environments) ----------------------

class PopulationEvaluator {
  public:
    PopulationEvaluator(const TabularConfoundedMDP& env, int t_len);

    using Fn = std::function<double(double)>;

    double phi_vf(const Policy& pi, const Fn& v, const Fn& g, const Nuisance& nuisance,
                  WeightMode mode = WeightMode::Iv) const;
    double phi_mis(const Policy& pi, const Fn& w, const Fn& f, const Nuisance& nuisance,
                   WeightMode mode = WeightMode::Iv) const;
    double l_mis(const Policy& pi, const Fn& w, const Nuisance& nuisance,
                 WeightMode mode = WeightMode::Iv) const;
    double l_dr(const Policy& pi, const Fn& w, const Fn& v, const Nuisance& nuisance,
                WeightMode mode = WeightMode::Iv) const;

    const TabularConfoundedMDP& env() const { return *env_; }
    const StepMarginals& marginals() const { return marg_; }

  private:
    double weight(int s, int z, int a, const Policy& pi, const Nuisance& nuisance,
                  WeightMode mode) const;

    const TabularConfoundedMDP* env_;
    StepMarginals marg_;
    SimplexCode code_;
    Eigen::MatrixXd propensity_;
    double gamma_;
};

// population versions of the empirical systems, from the exact joint step
// marginals of a tabular environment
VfSystem build_vf_system_pop(const PopulationEvaluator& pop, const Policy& pi,
                             const FeatureMap& map, const Nuisance& nuisance,
                             WeightMode mode = WeightMode::Iv);
MisSystem build_mis_system_pop(const PopulationEvaluator& pop, const Policy& pi,
                               const FeatureMap& map, const Nuisance& nuisance,
                               const Eigen::VectorXd& qnu, WeightMode mode = WeightMode::Iv);

// Sequential importance sampling estimate of V^pi(s0) over the trajectories
// whose initial state matches the bucket; truncation at T biases by
// O(gamma^T / (1-gamma)). Diagnostic only.
double rollout_value_is(const SampleCache& cache, const Policy& pi, double s0_bucket, double gamma,
                        WeightMode mode = WeightMode::Iv);

}  // namespace ivrl
