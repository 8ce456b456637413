#pragma once

#include <Eigen/Dense>
#include <memory>
#include <stdexcept>

#include "ivrl/features.hpp"

namespace ivrl {

// A policy maps an observed scalar state to a distribution over the K
// actions. Tabular environments pass the state index cast to double.
class Policy {
  public:
    virtual ~Policy() = default;
    virtual int num_actions() const = 0;
    virtual Eigen::VectorXd probs(double s) const = 0;

    double prob(double s, int a) const { return probs(s)[a]; }
};

// pi(a|s) proportional to exp(psi(s)^T weights.row(a)).
class SoftmaxPolicy final : public Policy {
  public:
    SoftmaxPolicy(FeatureMap map, Eigen::MatrixXd weights)
        : map_(std::move(map)), weights_(std::move(weights)) {
        if (weights_.cols() != map_.dim())
            throw std::invalid_argument("SoftmaxPolicy: weight/feature dimension mismatch");
        if (weights_.rows() < 2)
            throw std::invalid_argument("SoftmaxPolicy: need at least two actions");
    }

    static SoftmaxPolicy uniform(const FeatureMap& map, int k) {
        return SoftmaxPolicy(map, Eigen::MatrixXd::Zero(k, map.dim()));
    }

    int num_actions() const override { return static_cast<int>(weights_.rows()); }

    Eigen::VectorXd probs(double s) const override {
        Eigen::VectorXd logits = weights_ * map_.eval(s);
        const double m = logits.maxCoeff();
        Eigen::VectorXd e = (logits.array() - m).exp();
        return e / e.sum();
    }

    const Eigen::MatrixXd& weights() const { return weights_; }
    Eigen::MatrixXd& weights() { return weights_; }
    const FeatureMap& feature_map() const { return map_; }

  private:
    FeatureMap map_;
    Eigen::MatrixXd weights_;
};

// Probability table over discrete states; row s is the action distribution
// at state index s.
class TabularPolicy final : public Policy {
  public:
    explicit TabularPolicy(Eigen::MatrixXd probs) : probs_(std::move(probs)) {
        for (Eigen::Index s = 0; s < probs_.rows(); ++s) {
            if (std::abs(probs_.row(s).sum() - 1.0) > 1e-10 || probs_.row(s).minCoeff() < -1e-15)
                throw std::invalid_argument("TabularPolicy: rows must be distributions");
        }
    }

    static TabularPolicy deterministic(int n_states, int k, const std::vector<int>& action) {
        Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n_states, k);
        for (int s = 0; s < n_states; ++s) p(s, action.at(static_cast<std::size_t>(s))) = 1.0;
        return TabularPolicy(p);
    }

    int num_actions() const override { return static_cast<int>(probs_.cols()); }

    Eigen::VectorXd probs(double s) const override {
        const auto idx = static_cast<Eigen::Index>(std::llround(s));
        if (idx < 0 || idx >= probs_.rows())
            throw std::out_of_range("TabularPolicy: state index out of range");
        return probs_.row(idx);
    }

    const Eigen::MatrixXd& table() const { return probs_; }

  private:
    Eigen::MatrixXd probs_;
};

}  // namespace ivrl
