#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "ivrl/dataset.hpp"
#include "ivrl/env.hpp"
#include "ivrl/features.hpp"
#include "ivrl/simplex.hpp"

namespace ivrl {

// Softmax-linear model over generic feature vectors; class c gets logit
// weights.row(c) . x. Fitting is full-batch damped Newton on the ridged
// negative log-likelihood, which is strictly convex, so the minimizer is
// unique and restarts agree.
class MultinomialLogit {
  public:
    MultinomialLogit(int classes, int dim) : weights_(Eigen::MatrixXd::Zero(classes, dim)) {}
    explicit MultinomialLogit(Eigen::MatrixXd weights) : weights_(std::move(weights)) {}

    int classes() const { return static_cast<int>(weights_.rows()); }
    int dim() const { return static_cast<int>(weights_.cols()); }

    Eigen::VectorXd probs(const Eigen::VectorXd& x) const {
        Eigen::VectorXd logits = weights_ * x;
        const double m = logits.maxCoeff();
        Eigen::VectorXd e = (logits.array() - m).exp();
        return e / e.sum();
    }

    const Eigen::MatrixXd& weights() const { return weights_; }
    Eigen::MatrixXd& weights() { return weights_; }

  private:
    Eigen::MatrixXd weights_;
};

struct LogitFitConfig {
    double ridge = 1e-6;
    double grad_tol = 1e-8;
    int max_iter = 500;
};

struct LogitFit {
    MultinomialLogit model;
    double loss = 0.0;  // ridged mean NLL at the minimizer
    double grad_norm = 0.0;
    int iterations = 0;
};

// mean negative log-likelihood plus (ridge/2)*||W||_F^2
double logit_loss(const MultinomialLogit& model, const Eigen::MatrixXd& xs,
                  const std::vector<int>& ys, double ridge);

LogitFit fit_logit(const Eigen::MatrixXd& xs, const std::vector<int>& ys, int classes,
                   const LogitFitConfig& cfg = {},
                   const Eigen::MatrixXd* init_weights = nullptr);

// instrument model Theta(s, z) from all (S_t, Z_t) pairs
LogitFit fit_theta(const Dataset& data, const FeatureMap& map, const LogitFitConfig& cfg = {});

// action model P(a | s, z) on features (psi(s), code(z)); every instrument
// category must appear in the data
LogitFit fit_action_given_sz(const Dataset& data, const FeatureMap& map, const SimplexCode& code,
                             const LogitFitConfig& cfg = {});

// Theta(s,z) and Delta(s,a) with the evaluation floors of the bounded
// nuisance classes: theta() is clamped below at floor_theta, delta() at
// floor_delta in magnitude with its sign kept.
class Nuisance {
  public:
    virtual ~Nuisance() = default;
    virtual double theta(double s, int z) const = 0;
    virtual double delta(double s, int a) const = 0;
    virtual double floor_theta() const { return 1e-3; }
    virtual double floor_delta() const { return 1e-3; }
};

class OracleTabularNuisance final : public Nuisance {
  public:
    explicit OracleTabularNuisance(const TabularConfoundedMDP& env)
        : theta_(env.theta), delta_(env.delta_star()) {}
    double theta(double s, int z) const override;
    double delta(double s, int a) const override;

  private:
    Eigen::MatrixXd theta_;
    Eigen::MatrixXd delta_;
};

class OracleKidneyNuisance final : public Nuisance {
  public:
    explicit OracleKidneyNuisance(const KidneyEnv& env) : env_(env) {}
    double theta(double s, int z) const override { return env_.theta_star(s, z); }
    double delta(double s, int a) const override { return env_.delta_star(s, a); }

  private:
    KidneyEnv env_;
};

struct FittedNuisanceConfig {
    double floor_theta = 1e-3;
    double floor_delta = 1e-3;
};

class FittedNuisance final : public Nuisance {
  public:
    FittedNuisance(FeatureMap map, SimplexCode code, MultinomialLogit theta_model,
                   MultinomialLogit action_model, FittedNuisanceConfig cfg = {});

    double theta(double s, int z) const override;
    double delta(double s, int a) const override;
    double floor_theta() const override { return cfg_.floor_theta; }
    double floor_delta() const override { return cfg_.floor_delta; }

    // P(a | s, z=code) before the compliance contrast
    double action_prob(double s, int z, int a) const;

    bool weak_instrument_seen() const { return weak_instrument_; }

    const MultinomialLogit& theta_model() const { return theta_model_; }
    const MultinomialLogit& action_model() const { return action_model_; }

  private:
    FeatureMap map_;
    SimplexCode code_;
    MultinomialLogit theta_model_;
    MultinomialLogit action_model_;
    FittedNuisanceConfig cfg_;
    mutable bool weak_instrument_ = false;
};

// alpha_1-style radius: c_cfg * d * log(theta_max / delta) * log(n t) / (n t);
// the absolute constant and the mixing rate are folded into c_cfg
double conf_radius_theta(int d, int n, int t_len, double delta, double c_cfg, double theta_max);

// Finite stand-in for a loss-gap confidence set: the fitted minimizer plus
// accepted coefficient-space Gaussian perturbations whose loss gap stays
// within the radius. Proposal scale adapts toward an acceptance rate in
// [0.2, 0.8].
struct ConfidenceSet {
    double base_loss = 0.0;
    double radius = 0.0;
    std::vector<MultinomialLogit> candidates;  // candidates[0] is the minimizer
    bool degenerate = false;                   // no proposal accepted
};

ConfidenceSet build_conf_set(const MultinomialLogit& model,
                             const std::function<double(const MultinomialLogit&)>& loss_fn,
                             double radius, int n_cand, std::uint64_t seed);

// Parametric bootstrap radius: refit on data simulated from the fitted
// model and take the (1-delta)-quantile of observed loss gaps, scaled by
// c_cfg. States are kept fixed; only the labels are redrawn.
double calibrate_theta_radius(const MultinomialLogit& model, const Eigen::MatrixXd& xs,
                              double delta, int n_boot, std::uint64_t seed,
                              const LogitFitConfig& cfg = {}, double c_cfg = 1.0,
                              double theta_max = 10.0, MultinomialLogit* projected = nullptr);

// squared Hellinger distance between two conditional laws over a weighted
// discrete set of states
double hellinger_sq(const std::function<Eigen::VectorXd(double)>& p1,
                    const std::function<Eigen::VectorXd(double)>& p2,
                    const std::vector<double>& states, const std::vector<double>& state_probs);

}  // namespace ivrl
