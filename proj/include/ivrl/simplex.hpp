#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

namespace ivrl {

// Simplex encoding of K categories into K unit vectors in R^{K-1} with
//   sum_j vectors[j] = 0   and   vectors[i] . vectors[j] = 1 if i == j,
//   -1/(K-1) otherwise.
// Both actions and instruments use this code; all IV weights depend on the
// categories only through these inner products. Category indices are 0-based.
class SimplexCode {
  public:
    explicit SimplexCode(int k);

    int k() const { return k_; }

    const Eigen::VectorXd& vector(int j) const { return vectors_.at(static_cast<std::size_t>(j)); }

    // Gram value, computed analytically (the dot product of the stored
    // vectors is reserved for tests).
    double inner(int i, int j) const {
        check_index(i);
        check_index(j);
        return i == j ? 1.0 : -1.0 / static_cast<double>(k_ - 1);
    }

  private:
    void check_index(int i) const {
        if (i < 0 || i >= k_) throw std::out_of_range("SimplexCode: category index out of range");
    }

    int k_;
    std::vector<Eigen::VectorXd> vectors_;
};

}  // namespace ivrl
