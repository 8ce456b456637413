#include <doctest.h>

#include <Eigen/Dense>
#include <limits>
#include <vector>

#include "ivrl/lp.hpp"
#include "ivrl/rng.hpp"

using namespace ivrl;

namespace {

// Brute-force oracle: a bounded piecewise-linear convex function attains its
// minimum at a vertex where n of the hyperplanes {w_i = +/-box} and
// {(r0 + R w)_j = 0} intersect. Enumerate all n-subsets.
double l1_min_enumerate(const Eigen::VectorXd& q, double lambda, const Eigen::VectorXd& r0,
                        const Eigen::MatrixXd& R, std::optional<double> box) {
    const int n = static_cast<int>(R.cols());
    const int m = static_cast<int>(R.rows());

    struct Plane {
        Eigen::VectorXd normal;
        double rhs;
    };
    std::vector<Plane> planes;
    for (int j = 0; j < m; ++j) planes.push_back({R.row(j).transpose(), -r0[j]});
    if (box) {
        for (int i = 0; i < n; ++i) {
            planes.push_back({Eigen::VectorXd::Unit(n, i), *box});
            planes.push_back({Eigen::VectorXd::Unit(n, i), -*box});
        }
    }

    double best = std::numeric_limits<double>::infinity();
    std::vector<int> pick(static_cast<std::size_t>(n));
    const int total = static_cast<int>(planes.size());

    std::function<void(int, int)> rec = [&](int start, int depth) {
        if (depth == n) {
            Eigen::MatrixXd a(n, n);
            Eigen::VectorXd b(n);
            for (int i = 0; i < n; ++i) {
                a.row(i) = planes[static_cast<std::size_t>(pick[static_cast<std::size_t>(i)])]
                               .normal.transpose();
                b[i] = planes[static_cast<std::size_t>(pick[static_cast<std::size_t>(i)])].rhs;
            }
            Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
            if (!lu.isInvertible()) return;
            Eigen::VectorXd w = lu.solve(b);
            if (box && w.lpNorm<Eigen::Infinity>() > *box + 1e-9) return;
            const double val = q.dot(w) + lambda * (r0 + R * w).lpNorm<1>();
            best = std::min(best, val);
            return;
        }
        for (int i = start; i <= total - (n - depth); ++i) {
            pick[static_cast<std::size_t>(depth)] = i;
            rec(i + 1, depth + 1);
        }
    };
    rec(0, 0);
    return best;
}

Eigen::MatrixXd random_matrix(Rng& rng, int r, int c, double scale) {
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, scale);
    return m;
}

}  // namespace

TEST_CASE("simplex solves a textbook LP") {
    // max x + y s.t. x + 2y <= 4, 3x + y <= 6  ->  (1.6, 1.2)
    Eigen::MatrixXd a(2, 2);
    a << 1, 2, 3, 1;
    Eigen::VectorXd b(2);
    b << 4, 6;
    Eigen::VectorXd c(2);
    c << -1, -1;
    const LpResult res = solve_lp(a, b, c);
    REQUIRE(res.status == LpResult::Status::Optimal);
    CHECK(res.x[0] == doctest::Approx(1.6).epsilon(1e-9));
    CHECK(res.x[1] == doctest::Approx(1.2).epsilon(1e-9));
}

TEST_CASE("simplex handles negative rhs via phase one") {
    // x >= 2 encoded as -x <= -2; minimize x
    Eigen::MatrixXd a(1, 1);
    a << -1;
    Eigen::VectorXd b(1);
    b << -2;
    Eigen::VectorXd c(1);
    c << 1;
    const LpResult res = solve_lp(a, b, c);
    REQUIRE(res.status == LpResult::Status::Optimal);
    CHECK(res.x[0] == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("simplex detects unbounded and infeasible problems") {
    Eigen::MatrixXd a(1, 1);
    a << -1;  // x can grow without bound
    Eigen::VectorXd b(1);
    b << 0;
    Eigen::VectorXd c(1);
    c << -1;
    CHECK(solve_lp(a, b, c).status == LpResult::Status::Unbounded);

    Eigen::MatrixXd a2(2, 1);
    a2 << 1, -1;  // x <= 1 and x >= 2
    Eigen::VectorXd b2(2);
    b2 << 1, -2;
    Eigen::VectorXd c2(1);
    c2 << 0;
    CHECK(solve_lp(a2, b2, c2).status == LpResult::Status::Infeasible);
}

TEST_CASE("l1 minimization reaches zero residual when the system is square") {
    Rng rng(41);
    for (int rep = 0; rep < 20; ++rep) {
        const Eigen::MatrixXd r = random_matrix(rng, 5, 5, 1.0);
        const Eigen::VectorXd r0 = random_matrix(rng, 5, 1, 1.0);
        const L1AffineResult res =
            minimize_l1_affine(Eigen::VectorXd::Zero(5), 1.0, r0, r);
        REQUIRE(res.status == L1AffineResult::Status::Optimal);
        CHECK(res.objective <= 1e-9);
        const Eigen::VectorXd direct = r.fullPivLu().solve(-r0);
        CHECK((res.w - direct).lpNorm<Eigen::Infinity>() <= 1e-7);
    }
}

TEST_CASE("lp backend agrees with the vertex enumeration oracle") {
    Rng rng(1234);
    for (int rep = 0; rep < 25; ++rep) {
        const int n = 4, m = 6;
        const Eigen::MatrixXd r = random_matrix(rng, m, n, 1.0);
        const Eigen::VectorXd r0 = random_matrix(rng, m, 1, 1.0);
        const Eigen::VectorXd q = random_matrix(rng, n, 1, 0.3);
        const double lambda = 1.0 + rng.uniform();

        // box keeps the problem bounded for arbitrary q
        const double box = 1.0;
        const L1AffineResult lp = minimize_l1_affine(q, lambda, r0, r, box);
        REQUIRE(lp.status == L1AffineResult::Status::Optimal);
        const double oracle = l1_min_enumerate(q, lambda, r0, r, box);
        CHECK(lp.objective == doctest::Approx(oracle).epsilon(1e-8));
    }
}

TEST_CASE("unconstrained direction with nonzero linear term is unbounded") {
    // q != 0 and lambda = 0: objective q . w has no minimum
    Eigen::MatrixXd r = Eigen::MatrixXd::Identity(3, 3);
    Eigen::VectorXd r0 = Eigen::VectorXd::Ones(3);
    Eigen::VectorXd q = Eigen::VectorXd::Ones(3);
    const L1AffineResult res = minimize_l1_affine(q, 0.0, r0, r);
    CHECK(res.status == L1AffineResult::Status::Unbounded);
}

TEST_CASE("subgradient backend agrees with the lp on zero-floor problems") {
    Rng rng(77);
    for (int rep = 0; rep < 10; ++rep) {
        const Eigen::MatrixXd r = random_matrix(rng, 5, 5, 1.0);
        const Eigen::VectorXd r0 = random_matrix(rng, 5, 1, 1.0);
        const L1AffineResult lp = minimize_l1_affine(Eigen::VectorXd::Zero(5), 1.0, r0, r);
        SubgradientConfig cfg;
        cfg.use_target = true;  // zero is a valid lower bound here
        const L1AffineResult sg =
            minimize_l1_subgradient(Eigen::VectorXd::Zero(5), 1.0, r0, r, std::nullopt, cfg);
        CHECK(std::abs(lp.objective - sg.objective) <= 1e-6);
    }
}

TEST_CASE("box-constrained l1 fit stays inside the box") {
    Rng rng(3);
    const Eigen::MatrixXd r = random_matrix(rng, 5, 5, 1.0);
    const Eigen::VectorXd r0 = 10.0 * random_matrix(rng, 5, 1, 1.0);
    const double box = 0.5;
    const L1AffineResult res = minimize_l1_affine(Eigen::VectorXd::Zero(5), 1.0, r0, r, box);
    REQUIRE(res.status == L1AffineResult::Status::Optimal);
    CHECK(res.w.lpNorm<Eigen::Infinity>() <= box + 1e-9);
}
