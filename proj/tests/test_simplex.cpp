#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <random>

#include "ivrl/simplex.hpp"

using ivrl::SimplexCode;

TEST_CASE("vectors sum to zero and have the constant Gram structure") {
    for (int k = 2; k <= 8; ++k) {
        SimplexCode code(k);
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(k - 1);
        for (int j = 0; j < k; ++j) sum += code.vector(j);
        CHECK(sum.lpNorm<Eigen::Infinity>() <= 1e-12);

        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
                const double expected = i == j ? 1.0 : -1.0 / (k - 1);
                CHECK(std::abs(code.vector(i).dot(code.vector(j)) - expected) <= 1e-12);
            }
    }
}

TEST_CASE("analytic inner matches the dot product") {
    for (int k = 2; k <= 8; ++k) {
        SimplexCode code(k);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
                CHECK(std::abs(code.inner(i, j) - code.vector(i).dot(code.vector(j))) <= 1e-12);
    }
}

TEST_CASE("binary code is the signed scalar pair") {
    SimplexCode code(2);
    CHECK(code.vector(0)[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(code.vector(1)[0] == doctest::Approx(-1.0).epsilon(1e-15));
}

TEST_CASE("ternary Gram has off-diagonal -1/2") {
    SimplexCode code(3);
    CHECK(code.inner(2, 2) == doctest::Approx(1.0));
    CHECK(code.inner(0, 2) == doctest::Approx(-0.5));
    SimplexCode five(5);
    CHECK(five.inner(1, 4) == doctest::Approx(-0.25));
}

TEST_CASE("invalid category count and indices are rejected") {
    CHECK_THROWS_AS(SimplexCode(1), std::invalid_argument);
    CHECK_THROWS_AS(SimplexCode(0), std::invalid_argument);
    SimplexCode code(3);
    CHECK_THROWS_AS(code.inner(-1, 0), std::out_of_range);
    CHECK_THROWS_AS(code.inner(0, 3), std::out_of_range);
}

TEST_CASE("label permutation permutes vectors but preserves the Gram matrix") {
    const int k = 5;
    SimplexCode code(k);
    std::vector<int> perm(k);
    for (int i = 0; i < k; ++i) perm[i] = i;
    std::mt19937 gen(7);
    for (int rep = 0; rep < 10; ++rep) {
        std::shuffle(perm.begin(), perm.end(), gen);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
                CHECK(std::abs(code.vector(perm[i]).dot(code.vector(perm[j])) -
                               code.inner(i, j)) <= 1e-12);
    }
}
