#include <doctest.h>

#include "ivrl/features.hpp"
#include "ivrl/policy.hpp"
#include "ivrl/rng.hpp"

using namespace ivrl;

TEST_CASE("polynomial features with and without standardization") {
    FeatureMap map(4);
    Eigen::VectorXd at0 = map.eval(0.0);
    CHECK(at0[0] == 1.0);
    for (int i = 1; i <= 4; ++i) CHECK(at0[i] == 0.0);

    Eigen::VectorXd at2 = map.eval(2.0);
    CHECK(at2[1] == 2.0);
    CHECK(at2[2] == 4.0);
    CHECK(at2[3] == 8.0);
    CHECK(at2[4] == 16.0);

    FeatureMap std_map(4, FeatureMap::Standardize{2.0, 2.0});
    Eigen::VectorXd at4 = std_map.eval(4.0);
    for (int i = 0; i <= 4; ++i) CHECK(at4[i] == 1.0);

    CHECK_THROWS_AS(map.eval(std::nan("")), std::invalid_argument);
    CHECK_THROWS_AS(FeatureMap(-1), std::invalid_argument);
}

TEST_CASE("softmax policy: uniform at zero weights, saturation, normalization") {
    FeatureMap map(4);
    SoftmaxPolicy pi = SoftmaxPolicy::uniform(map, 3);
    Eigen::VectorXd p = pi.probs(1.7);
    for (int a = 0; a < 3; ++a) CHECK(p[a] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(3, 5);
    w(1, 0) = 50.0;
    SoftmaxPolicy dominant(map, w);
    CHECK(dominant.probs(0.0)[1] >= 1.0 - 1e-20);
}

TEST_CASE("softmax shift invariance and normalization over random weights") {
    FeatureMap map(3);
    Rng rng(314);
    for (int rep = 0; rep < 50; ++rep) {
        Eigen::MatrixXd w(4, 4);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) w(i, j) = rng.normal(0.0, 2.0);
        const double s = rng.normal(0.0, 1.5);

        SoftmaxPolicy pi(map, w);
        Eigen::VectorXd p = pi.probs(s);
        CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(p.minCoeff() > 0.0);

        Eigen::MatrixXd shifted = w;
        Eigen::VectorXd offset(4);
        for (int j = 0; j < 4; ++j) offset[j] = rng.normal(0.0, 1.0);
        shifted.rowwise() += offset.transpose();
        SoftmaxPolicy pi2(map, shifted);
        CHECK((pi2.probs(s) - p).lpNorm<Eigen::Infinity>() <= 1e-12);
    }
}

TEST_CASE("box projection is idempotent and a sup-norm non-expansion") {
    Rng rng(99);
    for (int rep = 0; rep < 50; ++rep) {
        BoxedLinearW a, b;
        a.box = b.box = 1.0;
        a.coef.resize(5);
        b.coef.resize(5);
        for (int i = 0; i < 5; ++i) {
            a.coef[i] = rng.normal(0.0, 2.0);
            b.coef[i] = rng.normal(0.0, 2.0);
        }
        const double before = (a.coef - b.coef).lpNorm<Eigen::Infinity>();
        BoxedLinearW a2 = a;
        a.project();
        b.project();
        CHECK(a.in_box());
        CHECK(b.in_box());
        a2.project();
        a2.project();
        CHECK((a2.coef - a.coef).lpNorm<Eigen::Infinity>() == 0.0);
        CHECK((a.coef - b.coef).lpNorm<Eigen::Infinity>() <= before + 1e-15);
    }
}

TEST_CASE("negating a box member stays in the class") {
    BoxedLinearW w;
    w.coef = Eigen::VectorXd::Constant(5, 0.7);
    w.box = 1.0;
    BoxedLinearW neg = w;
    neg.coef = -w.coef;
    CHECK(neg.in_box());
}

TEST_CASE("tabular policy validates rows and evaluates by index") {
    Eigen::MatrixXd probs(2, 2);
    probs << 0.3, 0.7, 1.0, 0.0;
    TabularPolicy pi(probs);
    CHECK(pi.prob(0.0, 1) == doctest::Approx(0.7));
    CHECK(pi.prob(1.0, 0) == doctest::Approx(1.0));
    CHECK_THROWS_AS(pi.probs(5.0), std::out_of_range);

    Eigen::MatrixXd bad(1, 2);
    bad << 0.5, 0.6;
    CHECK_THROWS_AS(TabularPolicy{bad}, std::invalid_argument);
}
