#include "ivrl/lp.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace ivrl {

namespace {

constexpr double kPivotEps = 1e-9;

// Bland's rule pivoting on a dense tableau. Columns are [vars | rhs]; basis
// holds the column index of the basic variable for each row. The objective
// row is last and stores reduced costs with the objective value (negated) in
// the rhs cell.
struct Tableau {
    Eigen::MatrixXd t;       // (m+1) x (n+1)
    std::vector<int> basis;  // size m

    int rows() const { return static_cast<int>(t.rows()) - 1; }
    int cols() const { return static_cast<int>(t.cols()) - 1; }

    void pivot(int pr, int pc) {
        t.row(pr) /= t(pr, pc);
        for (int r = 0; r < static_cast<int>(t.rows()); ++r) {
            if (r == pr) continue;
            const double f = t(r, pc);
            if (f != 0.0) t.row(r) -= f * t.row(pr);
        }
        basis[static_cast<std::size_t>(pr)] = pc;
    }

    // returns: 0 optimal, 1 unbounded, 2 iteration limit
    int run(int max_iter, int restrict_cols, int* iter_count) {
        const int m = rows();
        const int n = restrict_cols;  // ignore columns >= restrict_cols (retired artificials)
        for (int it = 0; it < max_iter; ++it) {
            // entering: smallest index with negative reduced cost
            int pc = -1;
            for (int c = 0; c < n; ++c) {
                if (t(m, c) < -kPivotEps) {
                    pc = c;
                    break;
                }
            }
            if (pc < 0) {
                *iter_count += it;
                return 0;
            }
            // leaving: min ratio, ties broken by smallest basis index
            int pr = -1;
            double best = std::numeric_limits<double>::infinity();
            for (int r = 0; r < m; ++r) {
                if (t(r, pc) > kPivotEps) {
                    const double ratio = t(r, cols()) / t(r, pc);
                    if (ratio < best - 1e-12 ||
                        (ratio < best + 1e-12 &&
                         (pr < 0 || basis[static_cast<std::size_t>(r)] <
                                        basis[static_cast<std::size_t>(pr)]))) {
                        best = ratio;
                        pr = r;
                    }
                }
            }
            if (pr < 0) {
                *iter_count += it;
                return 1;
            }
            pivot(pr, pc);
        }
        *iter_count += max_iter;
        return 2;
    }
};

}  // namespace

LpResult solve_lp(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                  int max_iter) {
    const int m = static_cast<int>(A.rows());
    const int n = static_cast<int>(A.cols());
    LpResult out;

    // columns: [x (n) | slack (m) | artificial (as needed) | rhs]
    int n_art = 0;
    for (int r = 0; r < m; ++r)
        if (b[r] < 0.0) ++n_art;

    const int total = n + m + n_art;
    Tableau tab;
    tab.t = Eigen::MatrixXd::Zero(m + 1, total + 1);
    tab.basis.resize(static_cast<std::size_t>(m));

    int art = n + m;
    for (int r = 0; r < m; ++r) {
        const double sign = b[r] < 0.0 ? -1.0 : 1.0;
        tab.t.block(r, 0, 1, n) = sign * A.row(r);
        tab.t(r, n + r) = sign;  // slack
        tab.t(r, total) = sign * b[r];
        if (b[r] < 0.0) {
            tab.t(r, art) = 1.0;
            tab.basis[static_cast<std::size_t>(r)] = art;
            ++art;
        } else {
            tab.basis[static_cast<std::size_t>(r)] = n + r;
        }
    }

    // phase 1: minimize sum of artificials
    if (n_art > 0) {
        for (int cidx = n + m; cidx < total; ++cidx) tab.t(m, cidx) = 1.0;
        // price out the artificial basis
        for (int r = 0; r < m; ++r)
            if (tab.basis[static_cast<std::size_t>(r)] >= n + m) tab.t.row(m) -= tab.t.row(r);
        const int rc = tab.run(max_iter, total, &out.iterations);
        if (rc == 2) return out;
        if (tab.t(m, total) < -1e-7) {
            out.status = LpResult::Status::Infeasible;
            return out;
        }
        // pivot remaining artificials out of the basis where possible
        for (int r = 0; r < m; ++r) {
            if (tab.basis[static_cast<std::size_t>(r)] >= n + m) {
                int pc = -1;
                for (int cidx = 0; cidx < n + m; ++cidx) {
                    if (std::abs(tab.t(r, cidx)) > kPivotEps) {
                        pc = cidx;
                        break;
                    }
                }
                if (pc >= 0) tab.pivot(r, pc);
                // else: redundant row, harmless
            }
        }
    }

    // phase 2 objective
    tab.t.row(m).setZero();
    tab.t.block(m, 0, 1, n) = c.transpose();
    for (int r = 0; r < m; ++r) {
        const int bi = tab.basis[static_cast<std::size_t>(r)];
        if (bi < n && c[bi] != 0.0) tab.t.row(m) -= c[bi] * tab.t.row(r);
    }

    const int rc = tab.run(max_iter, n + m, &out.iterations);
    if (rc == 2) return out;
    if (rc == 1) {
        out.status = LpResult::Status::Unbounded;
        return out;
    }

    out.x = Eigen::VectorXd::Zero(n);
    for (int r = 0; r < m; ++r) {
        const int bi = tab.basis[static_cast<std::size_t>(r)];
        if (bi < n) out.x[bi] = tab.t(r, total);
    }

    // one refinement pass: re-solve the basic system against the original
    // data to shed accumulated pivot roundoff
    {
        std::vector<int> bcols;
        for (int r = 0; r < m; ++r) bcols.push_back(tab.basis[static_cast<std::size_t>(r)]);
        Eigen::MatrixXd B(m, m);
        for (int j = 0; j < m; ++j) {
            const int cidx = bcols[static_cast<std::size_t>(j)];
            if (cidx < n)
                B.col(j) = A.col(cidx);
            else if (cidx < n + m)
                B.col(j) = Eigen::VectorXd::Unit(m, cidx - n);
            else
                B.col(j) = Eigen::VectorXd::Zero(m);  // stranded artificial (redundant row)
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(B);
        if (lu.isInvertible()) {
            const Eigen::VectorXd xb = lu.solve(b);
            Eigen::VectorXd refined = Eigen::VectorXd::Zero(n);
            bool ok = true;
            for (int j = 0; j < m; ++j) {
                const int cidx = bcols[static_cast<std::size_t>(j)];
                if (xb[j] < -1e-7) ok = false;
                if (cidx < n) refined[cidx] = std::max(0.0, xb[j]);
            }
            if (ok) out.x = refined;
        }
    }

    out.objective = c.dot(out.x);
    out.status = LpResult::Status::Optimal;
    return out;
}

L1AffineResult minimize_l1_affine(const Eigen::VectorXd& q, double lambda,
                                  const Eigen::VectorXd& r0, const Eigen::MatrixXd& R,
                                  std::optional<double> box) {
    const int n = static_cast<int>(R.cols());
    const int m = static_cast<int>(R.rows());
    L1AffineResult out;

    // variables: [w+ (n) | w- (n) | t (m)]
    const int nv = 2 * n + m;
    const int extra = box ? n : 0;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * m + extra, nv);
    Eigen::VectorXd b(2 * m + extra);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(nv);

    //  R w - t <= -r0   and   -R w - t <= r0
    A.block(0, 0, m, n) = R;
    A.block(0, n, m, n) = -R;
    A.block(0, 2 * n, m, m) = -Eigen::MatrixXd::Identity(m, m);
    b.head(m) = -r0;
    A.block(m, 0, m, n) = -R;
    A.block(m, n, m, n) = R;
    A.block(m, 2 * n, m, m) = -Eigen::MatrixXd::Identity(m, m);
    b.segment(m, m) = r0;
    if (box) {
        // w+_i + w-_i <= box confines w to the inf-ball
        A.block(2 * m, 0, n, n) = Eigen::MatrixXd::Identity(n, n);
        A.block(2 * m, n, n, n) = Eigen::MatrixXd::Identity(n, n);
        b.tail(n).setConstant(*box);
    }
    c.head(n) = q;
    c.segment(n, n) = -q;
    c.tail(m).setConstant(lambda);

    LpResult lp = solve_lp(A, b, c);
    out.iterations = lp.iterations;
    if (lp.status == LpResult::Status::Unbounded) {
        out.status = L1AffineResult::Status::Unbounded;
        return out;
    }
    if (lp.status != LpResult::Status::Optimal) return out;

    out.w = lp.x.head(n) - lp.x.segment(n, n);
    out.residual = r0 + R * out.w;
    out.l1_norm = out.residual.lpNorm<1>();
    out.objective = q.dot(out.w) + lambda * out.l1_norm;
    out.status = L1AffineResult::Status::Optimal;
    return out;
}

L1AffineResult minimize_l1_subgradient(const Eigen::VectorXd& q_in, double lambda,
                                       const Eigen::VectorXd& r0, const Eigen::MatrixXd& R_in,
                                       std::optional<double> box_in, const SubgradientConfig& cfg) {
    const int n = static_cast<int>(R_in.cols());
    L1AffineResult out;

    // column equilibration: an exact reparameterization that tames the step
    // geometry on ill-conditioned systems
    Eigen::VectorXd colscale(n);
    for (int i = 0; i < n; ++i) {
        const double nrm = R_in.col(i).norm();
        colscale[i] = nrm > 1e-300 ? 1.0 / nrm : 1.0;
    }
    const Eigen::MatrixXd R = R_in * colscale.asDiagonal();
    const Eigen::VectorXd q = colscale.asDiagonal() * q_in;
    // the box is per-coordinate, so it maps through the same scaling
    std::optional<Eigen::VectorXd> box_vec;
    if (box_in) {
        Eigen::VectorXd b(n);
        for (int i = 0; i < n; ++i) b[i] = *box_in / colscale[i];
        box_vec = b;
    }

    auto project = [&](Eigen::VectorXd& w) {
        if (box_vec)
            for (int i = 0; i < n; ++i) w[i] = std::clamp(w[i], -(*box_vec)[i], (*box_vec)[i]);
    };
    auto value = [&](const Eigen::VectorXd& w) {
        return q.dot(w) + lambda * (r0 + R * w).lpNorm<1>();
    };

    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd best_w = w;
    double best = value(w);

    auto subgrad = [&](const Eigen::VectorXd& at) {
        const Eigen::VectorXd r = r0 + R * at;
        Eigen::VectorXd sgn(r.size());
        for (Eigen::Index i = 0; i < r.size(); ++i) sgn[i] = r[i] >= 0.0 ? 1.0 : -1.0;
        return Eigen::VectorXd(q + lambda * (R.transpose() * sgn));
    };

    // Polyak steps; the target level is the known lower bound when one is
    // supplied, otherwise an adaptive level a shrinking delta below the
    // incumbent. The iterate is allowed to wander (subgradient steps are not
    // descent steps); only the best point is kept.
    double delta = cfg.use_target ? 0.0 : 0.5 * std::max(1.0, std::abs(best));
    int it = 0;
    int since_progress = 0;
    while (it < cfg.max_iter) {
        const double target = cfg.use_target ? cfg.target : best - delta;
        if (cfg.use_target && best - target <= 0.25 * cfg.tol) break;
        if (!cfg.use_target && delta <= 0.25 * cfg.tol) break;

        const double fw = value(w);
        if (fw < best - 1e-15) {
            best = fw;
            best_w = w;
            since_progress = 0;
        } else {
            ++since_progress;
        }
        const Eigen::VectorXd g = subgrad(w);
        const double gn2 = g.squaredNorm();
        if (gn2 < 1e-30) break;

        const double gap = fw - target;
        if (gap <= 0.0) {
            // below the current level: tighten it and keep moving
            if (!cfg.use_target) delta *= 0.5;
            ++it;
            continue;
        }
        w -= (gap / gn2) * g;
        project(w);
        ++it;

        // a long span without improvement means the level is unreachable
        if (!cfg.use_target && since_progress > 400) {
            delta *= 0.5;
            since_progress = 0;
        }
        if (cfg.use_target && since_progress > 20000) break;
    }
    out.iterations = it;

    out.w = colscale.asDiagonal() * best_w;  // undo the equilibration
    out.residual = r0 + R_in * out.w;
    out.l1_norm = out.residual.lpNorm<1>();
    out.objective = q_in.dot(out.w) + lambda * out.l1_norm;
    out.status = L1AffineResult::Status::Optimal;
    return out;
}

}  // namespace ivrl
