#include "infloc/pfcore.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>

#include "infloc/linsolve.hpp"

namespace infloc::pfcore {

using ecf::EcfSystem;
using ecf::SparseMatrix;
using ecf::Triplet;

const char* to_string(SolveStatus status) {
    switch (status) {
        case SolveStatus::Converged: return "converged";
        case SolveStatus::Diverged: return "diverged";
        case SolveStatus::Partial: return "partial";
    }
    return "?";
}

Vector injection_magnitudes(const Vector& i_f) {
    Vector mags(i_f.size() / 2);
    for (Eigen::Index j = 0; j < mags.size(); ++j) {
        mags[j] = std::hypot(i_f[2 * j], i_f[2 * j + 1]);
    }
    return mags;
}

PowerFlowResult solve_powerflow(const netmodel::Network& net, const StateVector& x0,
                                const SolverOptions& opts) {
    EcfSystem sys(net);
    return solve_powerflow(sys, x0, opts);
}

PowerFlowResult solve_powerflow(const EcfSystem& sys, const StateVector& x0,
                                const SolverOptions& opts) {
    PowerFlowResult result;
    result.x = x0;
    if (!sys.voltage_ok(result.x)) return result;

    linsolve::SparseLu lu;
    for (int it = 0; it <= opts.max_iter; ++it) {
        Vector r = sys.residual(result.x);
        result.residual_norm = r.lpNorm<Eigen::Infinity>();
        result.iterations = it;
        if (result.residual_norm <= opts.tol) {
            result.status = SolveStatus::Converged;
            return result;
        }
        if (it == opts.max_iter) break;

        try {
            lu.factorize(sys.jacobian(result.x));
        } catch (const SingularMatrix&) {
            break;
        }
        Vector dx = lu.solve(-r);
        double scale = std::min(1.0, opts.damping /
                                         std::max(dx.lpNorm<Eigen::Infinity>(),
                                                  std::numeric_limits<double>::min()));
        StateVector next;
        bool stepped = false;
        for (int halvings = 0; halvings <= 10; ++halvings) {
            next.values = result.x.values + scale * dx;
            if (sys.voltage_ok(next)) {
                stepped = true;
                break;
            }
            scale *= 0.5;
        }
        if (!stepped) break;  // the step cannot stay inside the voltage region
        result.x = next;
    }
    result.status = SolveStatus::Diverged;
    return result;
}

namespace {

// ---------------------------------------------------------------------------
// Dense stage of the least-norm solve: minimize 1/2 ||g_inj(w)||^2 over the
// reduced parametrization w = [theta at PV buses | vr,vi at PQ buses | qg],
// with the slack voltage pinned. Square nonlinear least squares solved by
// Levenberg-Marquardt; the PV magnitude and slack rows hold exactly by
// construction, which keeps every iterate well-defined.
// ---------------------------------------------------------------------------
struct ReducedMap {
    const EcfSystem* sys;
    std::vector<int> pq;             // internal indices of PQ buses
    std::vector<int> row_pos;        // constraint row -> injection position, -1
    int n_w = 0;

    explicit ReducedMap(const EcfSystem& s) : sys(&s) {
        const auto& pv = s.pv_buses();
        for (int b = 0; b < s.n_bus(); ++b) {
            if (b == s.slack_bus()) continue;
            if (std::find(pv.begin(), pv.end(), b) == pv.end()) pq.push_back(b);
        }
        row_pos.assign(s.n_eq(), -1);
        const auto& rows = s.injection_rows();
        for (size_t j = 0; j < rows.size(); ++j) row_pos[rows[j]] = static_cast<int>(j);
        n_w = static_cast<int>(pv.size() + 2 * pq.size() + pv.size());
    }

    int n_pv() const { return sys->n_pv(); }
    int theta_col(int pv_ordinal) const { return pv_ordinal; }
    int vr_col(int pq_ordinal) const { return n_pv() + pq_ordinal; }
    int vi_col(int pq_ordinal) const { return n_pv() + static_cast<int>(pq.size()) + pq_ordinal; }
    int qg_col(int pv_ordinal) const { return n_pv() + 2 * static_cast<int>(pq.size()) + pv_ordinal; }

    Vector pack(const StateVector& x) const {
        Vector w(n_w);
        const auto& pv = sys->pv_buses();
        for (size_t k = 0; k < pv.size(); ++k) {
            w[theta_col(static_cast<int>(k))] = std::atan2(
                x.values[sys->vi_index(pv[k])], x.values[sys->vr_index(pv[k])]);
        }
        for (size_t k = 0; k < pq.size(); ++k) {
            w[vr_col(static_cast<int>(k))] = x.values[sys->vr_index(pq[k])];
            w[vi_col(static_cast<int>(k))] = x.values[sys->vi_index(pq[k])];
        }
        for (int k = 0; k < n_pv(); ++k) w[qg_col(k)] = x.values[sys->qg_index(k)];
        return w;
    }

    void unpack(const Vector& w, StateVector& x,
                const netmodel::Network& net) const {
        const auto& pv = sys->pv_buses();
        for (size_t k = 0; k < pv.size(); ++k) {
            double vset = net.buses[pv[k]].v_set;
            double th = w[theta_col(static_cast<int>(k))];
            x.values[sys->vr_index(pv[k])] = vset * std::cos(th);
            x.values[sys->vi_index(pv[k])] = vset * std::sin(th);
        }
        for (size_t k = 0; k < pq.size(); ++k) {
            x.values[sys->vr_index(pq[k])] = w[vr_col(static_cast<int>(k))];
            x.values[sys->vi_index(pq[k])] = w[vi_col(static_cast<int>(k))];
        }
        for (int k = 0; k < n_pv(); ++k) x.values[sys->qg_index(k)] = w[qg_col(k)];
    }

    // chain rule through the parametrization: columns for PV angles combine
    // the vr/vi columns of the full Jacobian
    SparseMatrix reduced_jacobian(const SparseMatrix& full, const StateVector& x) const {
        const auto& pv = sys->pv_buses();
        std::vector<int> col_map(sys->state_dim(), -1);
        std::vector<double> col_factor(sys->state_dim(), 1.0);
        std::vector<int> theta_of(sys->state_dim(), -1);
        for (size_t k = 0; k < pv.size(); ++k) {
            theta_of[sys->vr_index(pv[k])] = static_cast<int>(k);
            theta_of[sys->vi_index(pv[k])] = static_cast<int>(k);
        }
        for (size_t k = 0; k < pq.size(); ++k) {
            col_map[sys->vr_index(pq[k])] = vr_col(static_cast<int>(k));
            col_map[sys->vi_index(pq[k])] = vi_col(static_cast<int>(k));
        }
        for (int k = 0; k < n_pv(); ++k) col_map[sys->qg_index(k)] = qg_col(k);

        std::vector<Triplet> trip;
        trip.reserve(static_cast<size_t>(full.nonZeros()));
        const int nif = sys->injection_set().dim();
        for (int col = 0; col < full.outerSize(); ++col) {
            for (SparseMatrix::InnerIterator it(full, col); it; ++it) {
                int pos = row_pos[it.row()];
                if (pos < 0) continue;
                if (theta_of[col] >= 0) {
                    int k = theta_of[col];
                    int b = pv[k];
                    double factor = (col == sys->vr_index(b))
                                        ? -x.values[sys->vi_index(b)]
                                        : x.values[sys->vr_index(b)];
                    trip.emplace_back(pos, theta_col(k), it.value() * factor);
                } else if (col_map[col] >= 0) {
                    trip.emplace_back(pos, col_map[col], it.value());
                }
            }
        }
        SparseMatrix jw(nif, n_w);
        jw.setFromTriplets(trip.begin(), trip.end());
        return jw;
    }
};

struct LmOutcome {
    StateVector x;
    int iterations = 0;
    double cost = 0.0;
};

LmOutcome reduced_least_squares(const EcfSystem& sys, const netmodel::Network& net,
                                const StateVector& x0, const SolverOptions& opts) {
    ReducedMap map(sys);
    StateVector x = x0;
    Vector w = map.pack(x);
    map.unpack(w, x, net);  // snap PV buses onto their magnitude circles

    const auto& inj_rows = sys.injection_rows();
    auto eval = [&](const Vector& wv, StateVector& xv, Vector& g_out) -> bool {
        map.unpack(wv, xv, net);
        if (!sys.voltage_ok(xv)) return false;
        Vector full = sys.residual(xv);
        g_out.resize(inj_rows.size());
        for (size_t j = 0; j < inj_rows.size(); ++j) g_out[j] = full[inj_rows[j]];
        return true;
    };

    Vector g;
    if (!eval(w, x, g)) {
        LmOutcome out{x0, 0, std::numeric_limits<double>::infinity()};
        return out;
    }
    double cost = 0.5 * g.squaredNorm();

    SparseMatrix identity(map.n_w, map.n_w);
    identity.setIdentity();
    Eigen::SimplicialLDLT<SparseMatrix> ldlt;
    bool analyzed = false;

    double mu = 1e-4;
    int it = 0;
    const int max_lm = std::max(200, opts.max_iter);
    for (; it < max_lm; ++it) {
        SparseMatrix jw = map.reduced_jacobian(sys.jacobian(x), x);
        Vector grad = jw.transpose() * g;
        if (grad.lpNorm<Eigen::Infinity>() < 1e-10 || cost < 1e-24) break;
        SparseMatrix jtj = (jw.transpose() * jw).pruned();

        bool accepted = false;
        for (int tries = 0; tries < 40; ++tries) {
            SparseMatrix a = jtj + mu * identity;
            if (!analyzed) {
                ldlt.analyzePattern(a);
                analyzed = true;
            }
            ldlt.factorize(a);
            if (ldlt.info() != Eigen::Success) {
                mu *= 4.0;
                continue;
            }
            Vector step = ldlt.solve(-grad);
            if (step.lpNorm<Eigen::Infinity>() < 1e-13) {
                accepted = false;
                break;
            }
            Vector w_try = w + step;
            StateVector x_try = x;
            Vector g_try;
            if (eval(w_try, x_try, g_try)) {
                double cost_try = 0.5 * g_try.squaredNorm();
                if (cost_try < cost) {
                    w = w_try;
                    x = x_try;
                    g = g_try;
                    cost = cost_try;
                    mu = std::max(mu / 3.0, 1e-12);
                    accepted = true;
                    break;
                }
            }
            mu *= 4.0;
            if (mu > 1e12) break;
        }
        if (!accepted) break;
    }
    return LmOutcome{x, it, cost};
}

// closes the slack machine injection so its two balance rows hold exactly
void close_slack_injection(const EcfSystem& sys, StateVector& x) {
    x.values[sys.pg_slack_index()] = 0.0;
    x.values[sys.qg_slack_index()] = 0.0;
    Vector r = sys.residual(x);
    int s = sys.slack_bus();
    double vr = x.values[sys.vr_index(s)];
    double vi = x.values[sys.vi_index(s)];
    double m = vr * vr + vi * vi;
    double a11 = -vr / m, a12 = -vi / m;
    double a21 = -vi / m, a22 = vr / m;
    double rhs0 = -r[sys.kcl_row(s, false)];
    double rhs1 = -r[sys.kcl_row(s, true)];
    double det = a11 * a22 - a12 * a21;  // equals -1/m, never zero
    x.values[sys.pg_slack_index()] = (rhs0 * a22 - a12 * rhs1) / det;
    x.values[sys.qg_slack_index()] = (a11 * rhs1 - rhs0 * a21) / det;
}

struct PolishOutcome {
    StateVector x;
    Vector lambda;
    int iterations = 0;
    double residual_norm = std::numeric_limits<double>::infinity();
    bool converged = false;
};

// Newton on the first-order optimality system
//   g(X) - S S^T lambda = 0,   J(X)^T lambda = 0
// with an Armijo backtracking line search on the squared residual norm.
PolishOutcome polish_optimality(const EcfSystem& sys, const StateVector& x0,
                                const Vector& lambda0, const SolverOptions& opts) {
    const int nd = sys.state_dim();
    const auto& inj_rows = sys.injection_rows();
    std::vector<char> is_inj(nd, 0);
    for (int r : inj_rows) is_inj[r] = 1;

    PolishOutcome out;
    out.x = x0;
    out.lambda = lambda0;

    auto assemble_f = [&](const StateVector& x, const Vector& lambda) -> Vector {
        Vector g = sys.residual(x);
        SparseMatrix j = sys.jacobian(x);
        Vector f(2 * nd);
        for (int r = 0; r < nd; ++r) f[r] = g[r] - (is_inj[r] ? lambda[r] : 0.0);
        f.segment(nd, nd) = j.transpose() * lambda;
        return f;
    };

    Vector f = assemble_f(out.x, out.lambda);
    linsolve::SparseLu lu;
    for (int it = 0; it < opts.max_iter; ++it) {
        out.residual_norm = f.lpNorm<Eigen::Infinity>();
        out.iterations = it;
        if (out.residual_norm <= opts.tol) {
            out.converged = true;
            return out;
        }

        SparseMatrix j = sys.jacobian(out.x);
        SparseMatrix h = sys.hessian_lagrangian(out.x, out.lambda);
        std::vector<Triplet> trip;
        trip.reserve(2 * static_cast<size_t>(j.nonZeros()) +
                     static_cast<size_t>(h.nonZeros()) + inj_rows.size());
        for (int col = 0; col < j.outerSize(); ++col) {
            for (SparseMatrix::InnerIterator itj(j, col); itj; ++itj) {
                trip.emplace_back(static_cast<int>(itj.row()), col, itj.value());
                trip.emplace_back(nd + col, nd + static_cast<int>(itj.row()), itj.value());
            }
        }
        for (int col = 0; col < h.outerSize(); ++col) {
            for (SparseMatrix::InnerIterator ith(h, col); ith; ++ith) {
                trip.emplace_back(nd + static_cast<int>(ith.row()), col, ith.value());
            }
        }
        for (int r : inj_rows) trip.emplace_back(r, nd + r, -1.0);
        SparseMatrix k(2 * nd, 2 * nd);
        k.setFromTriplets(trip.begin(), trip.end());

        Vector d;
        try {
            lu.factorize(k);
            d = lu.solve(-f);
        } catch (const SingularMatrix&) {
            return out;
        }

        Vector dx = d.head(nd);
        Vector dl = d.tail(nd);
        double step = std::min(1.0, opts.damping /
                                        std::max(dx.lpNorm<Eigen::Infinity>(),
                                                 std::numeric_limits<double>::min()));
        double phi0 = f.squaredNorm();
        bool accepted = false;
        for (int bt = 0; bt < 30; ++bt) {
            StateVector x_try;
            x_try.values = out.x.values + step * dx;
            if (sys.voltage_ok(x_try)) {
                Vector l_try = out.lambda + step * dl;
                Vector f_try = assemble_f(x_try, l_try);
                if (f_try.squaredNorm() <= (1.0 - 1e-4 * step) * phi0) {
                    out.x = x_try;
                    out.lambda = l_try;
                    f = f_try;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if (!accepted) return out;  // stalled below a descent step
    }
    out.residual_norm = f.lpNorm<Eigen::Infinity>();
    out.iterations = opts.max_iter;
    out.converged = out.residual_norm <= opts.tol;
    return out;
}

InfeasibilitySolution package_l2(const EcfSystem& sys, const PolishOutcome& polish,
                                 int lm_iterations) {
    InfeasibilitySolution sol;
    sol.status = polish.converged ? SolveStatus::Converged : SolveStatus::Diverged;
    sol.x = polish.x;
    sol.lambda = polish.lambda;
    const auto& rows = sys.injection_rows();
    sol.i_f.resize(rows.size());
    for (size_t j = 0; j < rows.size(); ++j) sol.i_f[j] = -polish.lambda[rows[j]];
    sol.per_bus_mag = injection_magnitudes(sol.i_f);
    sol.objective = 0.5 * sol.i_f.squaredNorm();
    sol.iterations = lm_iterations + polish.iterations;
    sol.kkt_residual = polish.residual_norm;
    return sol;
}

}  // namespace

InfeasibilitySolution solve_l2(const netmodel::Network& net, const SolverOptions& opts) {
    EcfSystem sys(net);
    return solve_l2(sys, ecf::InitMode::Flat, opts);
}

InfeasibilitySolution solve_l2(const EcfSystem& sys, ecf::InitMode first_mode,
                               const SolverOptions& opts) {
    const netmodel::Network& net = sys.network();
    const auto& inj_rows = sys.injection_rows();

    auto attempt = [&](ecf::InitMode mode) -> InfeasibilitySolution {
        StateVector x0 = sys.init_state(mode);
        if (!sys.voltage_ok(x0)) {
            InfeasibilitySolution bad;
            bad.x = x0;
            return bad;
        }
        LmOutcome lm = reduced_least_squares(sys, net, x0, opts);
        if (!std::isfinite(lm.cost)) {
            InfeasibilitySolution bad;
            bad.x = x0;
            return bad;
        }
        close_slack_injection(sys, lm.x);
        Vector lambda = Vector::Zero(sys.n_eq());
        Vector g = sys.residual(lm.x);
        for (int r : inj_rows) lambda[r] = g[r];
        PolishOutcome polish = polish_optimality(sys, lm.x, lambda, opts);
        return package_l2(sys, polish, lm.iterations);
    };

    InfeasibilitySolution first = attempt(first_mode);
    if (first.status == SolveStatus::Converged) return first;

    ecf::InitMode second_mode = first_mode == ecf::InitMode::Flat
                                    ? ecf::InitMode::FromCase
                                    : ecf::InitMode::Flat;
    InfeasibilitySolution second = attempt(second_mode);
    if (second.status == SolveStatus::Converged) return second;
    // both failed: report the attempt that got closest
    if (second.lambda.size() > 0 &&
        (first.lambda.size() == 0 || second.kkt_residual < first.kkt_residual)) {
        return second;
    }
    return first;
}

}  // namespace infloc::pfcore
