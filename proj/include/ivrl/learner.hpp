#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ivrl/estimators.hpp"

namespace ivrl {

enum class PessimismMode { None, NoiseReplicate, ConstrainedDual };
enum class ObjectiveKind { Vf, Mis, Dr };

struct PessimismConfig {
    PessimismMode mode = PessimismMode::None;
    ObjectiveKind kind = ObjectiveKind::Vf;
    WeightMode weights = WeightMode::Iv;
    double alpha_vf = 0.0;
    double alpha_mis = 0.0;
    int n_noise = 10;
    double noise_sd = 0.1;
    double w_box = 1.0;      // coefficient bound of the W class
    bool dr_v_first = false;  // block order of the DR sweeps (diagnostics)
};

struct DualConfig {
    double lambda_init = 1.0;
    double lambda_cap = 1e6;
    int max_iter = 200;   // bracket + bisection budget
    double comp_tol = 1e-5;
    double box = 1.0;     // test-class bound in the VF inner max
};

struct DualState {
    double lambda = 0.0;
    Eigen::VectorXd v_coef;
    std::vector<double> gap_history;  // M(v*) - alpha per lambda probe
    bool unbounded = false;           // objective unbounded below (vacuous constraint)
    int iterations = 0;
    double complementarity = 0.0;     // |lambda * (M(v*) - alpha)| at termination
};

struct DualResult {
    double value = 0.0;
    DualState state;
};

// max_{lambda >= 0} min_v (qnu . v) + lambda * (M(v) - alpha_vf), where
// M(v) = box * (||c + A v||_1 - ||c + A vhat||_1). The lambda search brackets
// the concave dual by doubling and then bisects on the supergradient sign;
// every probe solves the inner minimization exactly, so the returned value is
// a certified lower bound on the constrained minimum (weak duality) at any
// probed lambda.
DualResult dual_solve_vf(const VfSystem& sys, const Eigen::VectorXd& qnu, double alpha_vf,
                         const DualConfig& cfg = {});

// analogous Lagrangian for the MIS side: min ell . w over the W box subject
// to ||mbar - M w||_1 within alpha_mis of the min-max fit's residual
DualResult dual_solve_mis(const MisSystem& sys, double alpha_mis, double w_box,
                          const DualConfig& cfg = {});

// Everything an objective evaluation needs: one sample cache per nuisance
// candidate (the first entry is the fitted minimizer or the oracle), the
// nu-side feature vector, and the fixed noise replicates.
struct LearnerContext {
    std::vector<SampleCache> caches;
    Eigen::VectorXd qnu;  // (1-gamma) * nu feature mean
    double gamma = 0.9;
    std::vector<Eigen::VectorXd> noise;  // per-replicate reward noise, fixed per run

    const SampleCache& primary() const { return caches.front(); }
};

LearnerContext make_context(std::vector<SampleCache> caches, Eigen::VectorXd qnu, double gamma);
void prepare_noise(LearnerContext& ctx, int n_noise, double noise_sd, std::uint64_t noise_seed);

// plain (non-pessimistic) estimates at the min-max fits
double plain_value(const LearnerContext& ctx, const Policy& pi, const PessimismConfig& cfg);

// constrained-dual pessimistic values; minimum across nuisance candidates
double pessimistic_j_vf(const LearnerContext& ctx, const Policy& pi, const PessimismConfig& cfg,
                        const DualConfig& dcfg = {});
double pessimistic_j_mis(const LearnerContext& ctx, const Policy& pi, const PessimismConfig& cfg,
                         const DualConfig& dcfg = {});
double pessimistic_j_dr(const LearnerContext& ctx, const Policy& pi, const PessimismConfig& cfg,
                        const DualConfig& dcfg = {});

// reward-noise replicate heuristic: refit the value function on each
// noise-perturbed dataset and keep the smallest nu-average
double noise_replicate_pessimism(const LearnerContext& ctx, const Policy& pi,
                                 const PessimismConfig& cfg);

using ObjectiveFn = std::function<double(const SoftmaxPolicy&)>;

ObjectiveFn make_objective(const LearnerContext& ctx, const PessimismConfig& cfg,
                           const DualConfig& dcfg = {});

struct ZeroOrderConfig {
    int iterations = 200;
    int perturbations = 8;  // directions per gradient estimate
    double smoothing = 0.1;
    double step0 = 1.0;
};

struct TraceRow {
    int iter = 0;
    double objective = 0.0;
    double grad_norm = 0.0;
    std::uint64_t param_hash = 0;
};

struct LearnResult {
    SoftmaxPolicy policy;
    double pessimistic_j = 0.0;
    std::vector<TraceRow> trace;
    std::string mode;
    std::uint64_t seed = 0;
};

std::uint64_t param_hash(const Eigen::MatrixXd& weights);

// Gaussian-smoothing two-point search over the softmax policy weights,
// maximizing the supplied objective; returns the best-seen policy
LearnResult learn(const ObjectiveFn& objective, const FeatureMap& map, int k,
                  const ZeroOrderConfig& zcfg, std::uint64_t seed, const std::string& mode_label);

// Bootstrap radius for the VF / MIS estimation constraints: trajectories are
// resampled with replacement and the (1 - delta)-quantile of the residual
// vector's L1 fluctuation around its sample mean is returned, scaled by
// c_cfg. parts holds per-trajectory residual means (vf_residual_parts /
// mis_residual_parts at the fitted coefficients).
double calibrate_alpha(const Eigen::MatrixXd& parts, double delta, int n_boot, std::uint64_t seed,
                       double c_cfg = 1.0);

}  // namespace ivrl
