#include "ivrl/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ivrl/rng.hpp"

namespace ivrl {

double logit_loss(const MultinomialLogit& model, const Eigen::MatrixXd& xs,
                  const std::vector<int>& ys, double ridge) {
    const auto n = static_cast<Eigen::Index>(ys.size());
    double nll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd logits = model.weights() * xs.row(i).transpose();
        const double m = logits.maxCoeff();
        const double lse = m + std::log((logits.array() - m).exp().sum());
        nll += lse - logits[ys[static_cast<std::size_t>(i)]];
    }
    return nll / static_cast<double>(n) + 0.5 * ridge * model.weights().squaredNorm();
}

LogitFit fit_logit(const Eigen::MatrixXd& xs, const std::vector<int>& ys, int classes,
                   const LogitFitConfig& cfg, const Eigen::MatrixXd* init_weights) {
    if (ys.empty()) throw std::invalid_argument("fit_logit: empty sample");
    const int n = static_cast<int>(ys.size());
    const int d = static_cast<int>(xs.cols());
    const int p = classes * d;

    MultinomialLogit model = init_weights != nullptr ? MultinomialLogit(*init_weights)
                                                     : MultinomialLogit(classes, d);
    double loss = logit_loss(model, xs, ys, cfg.ridge);

    Eigen::VectorXd grad(p);
    Eigen::MatrixXd hess(p, p);

    for (int it = 0; it < cfg.max_iter; ++it) {
        grad.setZero();
        hess.setZero();
        for (int i = 0; i < n; ++i) {
            const Eigen::VectorXd x = xs.row(i).transpose();
            const Eigen::VectorXd prob = model.probs(x);
            for (int c = 0; c < classes; ++c) {
                const double gc = prob[c] - (ys[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0);
                grad.segment(c * d, d) += gc * x;
            }
            // Fisher blocks (diag(p) - p p^T) (x) x x^T
            const Eigen::MatrixXd xxt = x * x.transpose();
            for (int c = 0; c < classes; ++c)
                for (int c2 = 0; c2 < classes; ++c2) {
                    const double s = prob[c] * ((c == c2 ? 1.0 : 0.0) - prob[c2]);
                    if (s != 0.0) hess.block(c * d, c2 * d, d, d) += s * xxt;
                }
        }
        grad /= n;
        hess /= n;
        for (int c = 0; c < classes; ++c)
            grad.segment(c * d, d) += cfg.ridge * model.weights().row(c).transpose();
        hess += cfg.ridge * Eigen::MatrixXd::Identity(p, p);

        const double gn = grad.norm();
        if (gn <= cfg.grad_tol)
            return LogitFit{model, loss, gn, it};

        Eigen::VectorXd step = hess.ldlt().solve(grad);
        // backtracking keeps Newton monotone on the few hard steps
        double t = 1.0;
        MultinomialLogit trial = model;
        for (int ls = 0; ls < 60; ++ls) {
            for (int c = 0; c < classes; ++c)
                trial.weights().row(c) =
                    model.weights().row(c) - t * step.segment(c * d, d).transpose();
            const double ltrial = logit_loss(trial, xs, ys, cfg.ridge);
            if (ltrial <= loss + 1e-14) {
                model = trial;
                loss = ltrial;
                break;
            }
            t *= 0.5;
            if (ls == 59)
                throw std::runtime_error("fit_logit: line search failed, grad_norm=" +
                                         std::to_string(gn));
        }
    }
    throw std::runtime_error("fit_logit: no convergence within iteration cap, grad_norm=" +
                             std::to_string(grad.norm()));
}

namespace {

Eigen::MatrixXd theta_design(const Dataset& data, const FeatureMap& map, std::vector<int>* ys) {
    std::size_t total = 0;
    for (const auto& tr : data.trajectories) total += tr.size();
    Eigen::MatrixXd xs(static_cast<Eigen::Index>(total), map.dim());
    ys->clear();
    ys->reserve(total);
    Eigen::Index row = 0;
    for (const auto& tr : data.trajectories)
        for (const auto& st : tr) {
            xs.row(row++) = map.eval(st.s).transpose();
            ys->push_back(st.z);
        }
    return xs;
}

}  // namespace

LogitFit fit_theta(const Dataset& data, const FeatureMap& map, const LogitFitConfig& cfg) {
    if (data.trajectories.empty()) throw std::invalid_argument("fit_theta: empty dataset");
    std::vector<int> ys;
    Eigen::MatrixXd xs = theta_design(data, map, &ys);
    int classes = 0;
    for (int y : ys) classes = std::max(classes, y + 1);
    classes = std::max(classes, 2);
    return fit_logit(xs, ys, classes, cfg);
}

LogitFit fit_action_given_sz(const Dataset& data, const FeatureMap& map, const SimplexCode& code,
                             const LogitFitConfig& cfg) {
    if (data.trajectories.empty()) throw std::invalid_argument("fit_action_given_sz: empty dataset");
    const int k = code.k();
    std::vector<bool> seen(static_cast<std::size_t>(k), false);
    std::size_t total = 0;
    for (const auto& tr : data.trajectories) {
        total += tr.size();
        for (const auto& st : tr) seen[static_cast<std::size_t>(st.z)] = true;
    }
    for (int z = 0; z < k; ++z)
        if (!seen[static_cast<std::size_t>(z)])
            throw std::runtime_error("fit_action_given_sz: instrument category " +
                                     std::to_string(z) + " absent from data");

    const int d = map.dim() + (k - 1);
    Eigen::MatrixXd xs(static_cast<Eigen::Index>(total), d);
    std::vector<int> ys;
    ys.reserve(total);
    Eigen::Index row = 0;
    for (const auto& tr : data.trajectories)
        for (const auto& st : tr) {
            xs.row(row).head(map.dim()) = map.eval(st.s).transpose();
            xs.row(row).tail(k - 1) = code.vector(st.z).transpose();
            ++row;
            ys.push_back(st.a);
        }
    return fit_logit(xs, ys, k, cfg);
}

double OracleTabularNuisance::theta(double s, int z) const {
    const auto idx = static_cast<Eigen::Index>(std::llround(s));
    return theta_(idx, z);
}

double OracleTabularNuisance::delta(double s, int a) const {
    const auto idx = static_cast<Eigen::Index>(std::llround(s));
    return delta_(idx, a);
}

FittedNuisance::FittedNuisance(FeatureMap map, SimplexCode code, MultinomialLogit theta_model,
                               MultinomialLogit action_model, FittedNuisanceConfig cfg)
    : map_(std::move(map)),
      code_(std::move(code)),
      theta_model_(std::move(theta_model)),
      action_model_(std::move(action_model)),
      cfg_(cfg) {}

double FittedNuisance::theta(double s, int z) const {
    const double p = theta_model_.probs(map_.eval(s))[z];
    return std::max(p, cfg_.floor_theta);
}

double FittedNuisance::action_prob(double s, int z, int a) const {
    Eigen::VectorXd x(map_.dim() + code_.k() - 1);
    x.head(map_.dim()) = map_.eval(s);
    x.tail(code_.k() - 1) = code_.vector(z);
    return action_model_.probs(x)[a];
}

double FittedNuisance::delta(double s, int a) const {
    const int k = code_.k();
    double off = 0.0;
    for (int z = 0; z < k; ++z)
        if (z != a) off += action_prob(s, z, a);
    const double d = action_prob(s, a, a) - off / static_cast<double>(k - 1);
    if (std::abs(d) < cfg_.floor_delta) {
        weak_instrument_ = true;
        return d >= 0.0 ? cfg_.floor_delta : -cfg_.floor_delta;
    }
    return d;
}

double conf_radius_theta(int d, int n, int t_len, double delta, double c_cfg, double theta_max) {
    if (d <= 0 || n <= 0 || t_len <= 0 || !(delta > 0.0 && delta < 1.0) || theta_max <= 0.0)
        throw std::invalid_argument("conf_radius_theta: invalid arguments");
    const double nt = static_cast<double>(n) * static_cast<double>(t_len);
    return c_cfg * static_cast<double>(d) * std::log(theta_max / delta) * std::log(nt) / nt;
}

ConfidenceSet build_conf_set(const MultinomialLogit& model,
                             const std::function<double(const MultinomialLogit&)>& loss_fn,
                             double radius, int n_cand, std::uint64_t seed) {
    if (radius < 0.0) throw std::invalid_argument("build_conf_set: radius must be >= 0");
    ConfidenceSet out;
    out.base_loss = loss_fn(model);
    out.radius = radius;
    out.candidates.push_back(model);
    if (radius == 0.0 || n_cand <= 0) return out;

    Rng rng(derive_seed(seed, {kStreamCandidates}));
    const int rows = model.classes();
    const int cols = model.dim();

    auto propose = [&](double scale) {
        MultinomialLogit cand = model;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) cand.weights()(r, c) += rng.normal(0.0, scale);
        return cand;
    };

    // scale adaptation toward a moderate acceptance rate
    double scale = std::sqrt(std::max(radius, 1e-12));
    for (int round = 0; round < 12; ++round) {
        int accepted = 0;
        const int probes = 16;
        for (int i = 0; i < probes; ++i)
            if (loss_fn(propose(scale)) - out.base_loss <= radius) ++accepted;
        const double rate = static_cast<double>(accepted) / probes;
        if (rate < 0.2)
            scale *= 0.5;
        else if (rate > 0.8)
            scale *= 2.0;
        else
            break;
    }

    const int cap = n_cand * 50;
    for (int tries = 0; tries < cap && static_cast<int>(out.candidates.size()) < n_cand + 1;
         ++tries) {
        MultinomialLogit cand = propose(scale);
        if (loss_fn(cand) - out.base_loss <= radius) out.candidates.push_back(std::move(cand));
    }
    if (out.candidates.size() == 1) out.degenerate = true;
    return out;
}

double calibrate_theta_radius(const MultinomialLogit& model, const Eigen::MatrixXd& xs,
                              double delta, int n_boot, std::uint64_t seed,
                              const LogitFitConfig& cfg, double c_cfg, double theta_max,
                              MultinomialLogit* projected) {
    if (n_boot < 2) throw std::invalid_argument("calibrate_theta_radius: need n_boot >= 2");

    MultinomialLogit base = model;
    const double norm = base.weights().norm();
    if (norm > theta_max) base.weights() *= theta_max / norm;
    if (projected != nullptr) *projected = base;

    const auto n = xs.rows();
    std::vector<double> gaps;
    gaps.reserve(static_cast<std::size_t>(n_boot));
    std::vector<double> probbuf(static_cast<std::size_t>(base.classes()));

    for (int b = 0; b < n_boot; ++b) {
        Rng rng(derive_seed(seed, {kStreamCalibration, static_cast<std::uint64_t>(b)}));
        std::vector<int> ys(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::VectorXd p = base.probs(xs.row(i).transpose());
            for (int c = 0; c < base.classes(); ++c) probbuf[static_cast<std::size_t>(c)] = p[c];
            ys[static_cast<std::size_t>(i)] =
                rng.categorical({probbuf.data(), probbuf.size()});
        }
        const LogitFit refit = fit_logit(xs, ys, base.classes(), cfg);
        gaps.push_back(logit_loss(base, xs, ys, cfg.ridge) - refit.loss);
    }
    std::sort(gaps.begin(), gaps.end());
    const auto idx = static_cast<std::size_t>(
        std::min<double>(std::ceil((1.0 - delta) * n_boot), n_boot - 1));
    return c_cfg * std::max(0.0, gaps[idx]);
}

double hellinger_sq(const std::function<Eigen::VectorXd(double)>& p1,
                    const std::function<Eigen::VectorXd(double)>& p2,
                    const std::vector<double>& states, const std::vector<double>& state_probs) {
    if (states.size() != state_probs.size())
        throw std::invalid_argument("hellinger_sq: state/prob size mismatch");
    double h2 = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) {
        const Eigen::VectorXd a = p1(states[i]);
        const Eigen::VectorXd b = p2(states[i]);
        double acc = 0.0;
        for (Eigen::Index j = 0; j < a.size(); ++j) {
            const double d = std::sqrt(a[j]) - std::sqrt(b[j]);
            acc += d * d;
        }
        h2 += 0.5 * state_probs[i] * acc;
    }
    return h2;
}

}  // namespace ivrl
