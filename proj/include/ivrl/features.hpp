#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>

namespace ivrl {

// Polynomial features of a scalar state: psi(s) = (1, s~, s~^2, ..., s~^degree)
// where s~ is the (optionally) standardized state. dim() == degree + 1.
class FeatureMap {
  public:
    struct Standardize {
        double mean = 0.0;
        double sd = 1.0;
    };

    explicit FeatureMap(int degree, std::optional<Standardize> standardize = std::nullopt)
        : degree_(degree), standardize_(standardize) {
        if (degree < 0) throw std::invalid_argument("FeatureMap: negative degree");
        if (standardize_ && !(standardize_->sd > 0.0))
            throw std::invalid_argument("FeatureMap: sd must be positive");
    }

    int degree() const { return degree_; }
    int dim() const { return degree_ + 1; }
    const std::optional<Standardize>& standardize() const { return standardize_; }

    Eigen::VectorXd eval(double s) const {
        if (!std::isfinite(s)) throw std::invalid_argument("FeatureMap: non-finite state");
        const double x = standardize_ ? (s - standardize_->mean) / standardize_->sd : s;
        Eigen::VectorXd psi(dim());
        double p = 1.0;
        for (int i = 0; i <= degree_; ++i) {
            psi[i] = p;
            p *= x;
        }
        return psi;
    }

  private:
    int degree_;
    std::optional<Standardize> standardize_;
};

// v(s) = psi(s)^T coef. The class is unbounded; the sup-norm cap used in the
// analysis is not enforced (an optional coefficient cap lives in the solver
// configs instead).
struct LinearV {
    Eigen::VectorXd coef;

    double value(const FeatureMap& map, double s) const { return map.eval(s).dot(coef); }
};

// g(s) = psi(s)^T coef with ||coef||_inf <= box.
struct BoxedLinearW {
    Eigen::VectorXd coef;
    double box = 1.0;

    double value(const FeatureMap& map, double s) const { return map.eval(s).dot(coef); }

    bool in_box(double tol = 0.0) const { return coef.lpNorm<Eigen::Infinity>() <= box + tol; }

    // clamp into the box; idempotent and an inf-norm non-expansion
    void project() {
        for (Eigen::Index i = 0; i < coef.size(); ++i)
            coef[i] = std::clamp(coef[i], -box, box);
    }
};

}  // namespace ivrl
