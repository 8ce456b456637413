#include "ivrl/simplex.hpp"

#include <cmath>

namespace ivrl {

SimplexCode::SimplexCode(int k) : k_(k) {
    if (k < 2) throw std::invalid_argument("SimplexCode: need at least two categories");
    const int d = k - 1;
    vectors_.reserve(static_cast<std::size_t>(k));

    // First vector is the all-ones direction scaled to unit norm; the rest
    // share a common offset plus a scaled coordinate axis. The offset sign is
    // chosen so that the vectors sum to zero and have the constant-Gram
    // structure (the construction is pinned by those identities).
    const double kd = static_cast<double>(k);
    const double first = 1.0 / std::sqrt(kd - 1.0);
    const double offset = -(1.0 + std::sqrt(kd)) / std::pow(kd - 1.0, 1.5);
    const double axis = std::sqrt(kd / (kd - 1.0));

    vectors_.push_back(Eigen::VectorXd::Constant(d, first));
    for (int j = 1; j < k; ++j) {
        Eigen::VectorXd v = Eigen::VectorXd::Constant(d, offset);
        v[j - 1] += axis;
        vectors_.push_back(std::move(v));
    }
}

}  // namespace ivrl
