#include "infloc/localizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "infloc/linsolve.hpp"

namespace infloc::localizer {

using ecf::EcfSystem;
using ecf::SparseMatrix;
using ecf::StateVector;
using ecf::Triplet;

EnforcerVector EnforcerVector::uniform(int n_injection_buses, double c_value) {
    EnforcerVector e;
    e.c = Vector::Constant(n_injection_buses, c_value);
    e.provenance = Provenance::UniformScalar;
    return e;
}

Vector EnforcerVector::per_component() const {
    Vector out(2 * c.size());
    for (Eigen::Index j = 0; j < c.size(); ++j) {
        out[2 * j] = c[j];
        out[2 * j + 1] = c[j];
    }
    return out;
}

double KktReport::max_condition_residual() const {
    return std::max({stationarity_if, dual_feas, comp_upper, comp_lower, primal_feas,
                     stationarity_x});
}

Bounds init_bounds(const Vector& i_f, const Vector& lambda_inj,
                   const Vector& c_per_component, double margin) {
    const Eigen::Index m = i_f.size();
    Bounds b;
    b.t.resize(m);
    b.mu_u.resize(m);
    b.mu_l.resize(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        b.t[j] = std::abs(i_f[j]) + margin;
        double c = c_per_component[j];
        if (c <= 0.0) {
            b.mu_u[j] = 0.0;
            b.mu_l[j] = 0.0;
            continue;
        }
        // interior split consistent with mu_u + mu_l = c; exact when the warm
        // start satisfies i_f = -lambda
        double floor = std::min(c / 2.0, std::max(1e-2 / (2.0 * b.t[j]), 1e-12));
        double mu_u = 0.5 * (c - lambda_inj[j] - i_f[j]);
        mu_u = std::clamp(mu_u, floor, c - floor);
        b.mu_u[j] = mu_u;
        b.mu_l[j] = c - mu_u;
    }
    return b;
}

namespace {

struct IpState {
    StateVector x;
    Vector i_f, t, lambda, mu_u, mu_l;
};

struct IpResiduals {
    Vector r1, r2, r3, r4, r5, r6;
    double norm_for_convergence(const Vector& c_comp) const {
        double norm = std::max({r1.lpNorm<Eigen::Infinity>(), r2.lpNorm<Eigen::Infinity>(),
                                r3.lpNorm<Eigen::Infinity>(), r6.lpNorm<Eigen::Infinity>()});
        for (Eigen::Index j = 0; j < r4.size(); ++j) {
            if (c_comp[j] <= 0.0) continue;  // inert bounds carry eps by design
            norm = std::max({norm, std::abs(r4[j]), std::abs(r5[j])});
        }
        return norm;
    }
};

IpResiduals ip_residuals(const EcfSystem& sys, const IpState& s, const Vector& c_comp,
                         double eps, const Vector& g, const SparseMatrix& jac) {
    const auto& rows = sys.injection_rows();
    const Eigen::Index m = s.i_f.size();
    IpResiduals r;
    r.r1.resize(m);
    r.r2.resize(m);
    r.r4.resize(m);
    r.r5.resize(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        double lam = s.lambda[rows[j]];
        r.r1[j] = s.i_f[j] + lam + s.mu_u[j] - s.mu_l[j];
        r.r2[j] = c_comp[j] - s.mu_u[j] - s.mu_l[j];
        r.r4[j] = s.mu_u[j] * (s.i_f[j] - s.t[j]) + eps;
        r.r5[j] = s.mu_l[j] * (-s.i_f[j] - s.t[j]) + eps;
    }
    r.r3 = jac.transpose() * s.lambda;
    r.r6 = g;
    for (Eigen::Index j = 0; j < m; ++j) r.r6[rows[j]] += s.i_f[j];
    return r;
}

// largest step in [0, 1] keeping v + a*dv >= (1 - tau) * v componentwise
double fraction_to_boundary(const Vector& v, const Vector& dv, const Vector& c_comp,
                            double tau) {
    double a = 1.0;
    for (Eigen::Index j = 0; j < v.size(); ++j) {
        if (c_comp[j] <= 0.0) continue;
        if (dv[j] < 0.0) a = std::min(a, -tau * v[j] / dv[j]);
    }
    return a;
}

}  // namespace

InfeasibilitySolution solve_sparse(const netmodel::Network& net, const EnforcerVector& c,
                                   const InfeasibilitySolution& warm,
                                   const SparsityConfig& cfg, const SolverOptions& opts) {
    EcfSystem sys(net);
    return solve_sparse(sys, c, warm, cfg, opts);
}

InfeasibilitySolution solve_sparse(const EcfSystem& sys, const EnforcerVector& c,
                                   const InfeasibilitySolution& warm,
                                   const SparsityConfig& cfg, const SolverOptions& opts) {
    const int nd = sys.state_dim();
    const auto& rows = sys.injection_rows();
    const int nif = sys.injection_set().dim();
    if (c.c.size() != sys.injection_set().buses.size()) {
        throw InvalidTopology("enforcer dimension does not match the injection set");
    }
    const Vector c_comp = c.per_component();

    IpState s;
    s.x = warm.x;
    s.lambda = warm.lambda.size() == nd ? warm.lambda : Vector::Zero(nd);
    s.i_f = warm.i_f.size() == nif ? warm.i_f : Vector::Zero(nif);
    Bounds b = init_bounds(s.i_f, [&] {
        Vector lam_inj(nif);
        for (int j = 0; j < nif; ++j) lam_inj[j] = s.lambda[rows[j]];
        return lam_inj;
    }(), c_comp, cfg.bound_margin);
    s.t = b.t;
    s.mu_u = b.mu_u;
    s.mu_l = b.mu_l;

    InfeasibilitySolution sol;
    sol.status = SolveStatus::Diverged;

    auto package = [&](double kkt_norm, int iterations) {
        sol.x = s.x;
        sol.i_f = s.i_f;
        sol.lambda = s.lambda;
        sol.t = s.t;
        sol.mu_u = s.mu_u;
        sol.mu_l = s.mu_l;
        sol.per_bus_mag = pfcore::injection_magnitudes(s.i_f);
        sol.objective = 0.5 * s.i_f.squaredNorm() + c_comp.dot(s.i_f.cwiseAbs());
        sol.kkt_residual = kkt_norm;
        sol.iterations = iterations;
    };

    if (!sys.voltage_ok(s.x)) {
        package(std::numeric_limits<double>::infinity(), 0);
        return sol;
    }

    linsolve::SparseLu lu;
    double eps = std::max(cfg.epsilon0, cfg.epsilon_min);
    int total_it = 0;
    constexpr double kBoundaryTau = 0.995;

    while (true) {
        const bool last_stage = eps <= cfg.epsilon_min * (1.0 + 1e-12);
        const double stage_tol = last_stage ? opts.tol : std::max(10.0 * eps, opts.tol);
        bool stage_done = false;

        while (!stage_done) {
            if (total_it >= opts.max_iter) {
                Vector g = sys.residual(s.x);
                SparseMatrix jac = sys.jacobian(s.x);
                IpResiduals r = ip_residuals(sys, s, c_comp, eps, g, jac);
                package(r.norm_for_convergence(c_comp), total_it);
                return sol;
            }
            Vector g = sys.residual(s.x);
            SparseMatrix jac = sys.jacobian(s.x);
            IpResiduals r = ip_residuals(sys, s, c_comp, eps, g, jac);
            double norm = r.norm_for_convergence(c_comp);
            if (norm <= stage_tol) {
                stage_done = true;
                if (last_stage) {
                    package(norm, total_it);
                    sol.status = SolveStatus::Converged;
                    return sol;
                }
                break;
            }
            ++total_it;

            // eliminate (t, mu) through the complementarity rows; theta is the
            // resulting diagonal weight on the injection block
            Vector s_u = s.t - s.i_f;
            Vector s_l = s.t + s.i_f;
            Vector theta(nif), rhs_if(nif), q(nif), d_u(nif), d_l(nif);
            for (int j = 0; j < nif; ++j) {
                if (c_comp[j] <= 0.0) {
                    theta[j] = 1.0;
                    rhs_if[j] = -r.r1[j];
                    q[j] = 0.0;
                    d_u[j] = d_l[j] = 0.0;
                    continue;
                }
                d_u[j] = s.mu_u[j] / s_u[j];
                d_l[j] = s.mu_l[j] / s_l[j];
                double dsum = d_u[j] + d_l[j];
                q[j] = r.r2[j] - r.r4[j] / s_u[j] - r.r5[j] / s_l[j];
                theta[j] = 1.0 + 4.0 * d_u[j] * d_l[j] / dsum;
                rhs_if[j] = -r.r1[j] - (r.r4[j] / s_u[j] - r.r5[j] / s_l[j]) -
                            q[j] * (d_u[j] - d_l[j]) / dsum;
            }

            SparseMatrix hess = sys.hessian_lagrangian(s.x, s.lambda);
            std::vector<Triplet> trip;
            trip.reserve(static_cast<size_t>(hess.nonZeros()) +
                         2 * static_cast<size_t>(jac.nonZeros()) + 3 * nif);
            for (int col = 0; col < hess.outerSize(); ++col) {
                for (SparseMatrix::InnerIterator it(hess, col); it; ++it) {
                    trip.emplace_back(static_cast<int>(it.row()), col, it.value());
                }
            }
            for (int col = 0; col < jac.outerSize(); ++col) {
                for (SparseMatrix::InnerIterator it(jac, col); it; ++it) {
                    // J^T in the state rows, J in the primal rows
                    trip.emplace_back(col, nd + nif + static_cast<int>(it.row()),
                                      it.value());
                    trip.emplace_back(nd + nif + static_cast<int>(it.row()), col,
                                      it.value());
                }
            }
            for (int j = 0; j < nif; ++j) {
                trip.emplace_back(nd + j, nd + j, theta[j]);
                trip.emplace_back(nd + j, nd + nif + rows[j], 1.0);
                trip.emplace_back(nd + nif + rows[j], nd + j, 1.0);
            }
            SparseMatrix kkt(nd + nif + nd, nd + nif + nd);
            kkt.setFromTriplets(trip.begin(), trip.end());

            Vector rhs(nd + nif + nd);
            rhs.head(nd) = -r.r3;
            rhs.segment(nd, nif) = rhs_if;
            rhs.tail(nd) = -r.r6;

            Vector d;
            try {
                lu.factorize(kkt);
                d = lu.solve(rhs);
            } catch (const SingularMatrix&) {
                package(norm, total_it);
                return sol;
            }
            Vector dx = d.head(nd);
            Vector di_f = d.segment(nd, nif);
            Vector dlam = d.tail(nd);

            Vector dt(nif), dmu_u(nif), dmu_l(nif);
            for (int j = 0; j < nif; ++j) {
                if (c_comp[j] <= 0.0) {
                    dt[j] = dmu_u[j] = dmu_l[j] = 0.0;
                    continue;
                }
                double dsum = d_u[j] + d_l[j];
                dt[j] = ((d_u[j] - d_l[j]) * di_f[j] - q[j]) / dsum;
                dmu_u[j] = (r.r4[j] + s.mu_u[j] * (di_f[j] - dt[j])) / s_u[j];
                dmu_l[j] = (r.r5[j] + s.mu_l[j] * (-di_f[j] - dt[j])) / s_l[j];
            }

            // fraction-to-boundary on the bound gaps and the multipliers
            Vector ds_u = dt - di_f;
            Vector ds_l = dt + di_f;
            double a_p = std::min(fraction_to_boundary(s_u, ds_u, c_comp, kBoundaryTau),
                                  fraction_to_boundary(s_l, ds_l, c_comp, kBoundaryTau));
            a_p = std::min(a_p, opts.damping /
                                    std::max(dx.lpNorm<Eigen::Infinity>(),
                                             std::numeric_limits<double>::min()));
            a_p = std::min(a_p, 1.0);
            double a_d =
                std::min(fraction_to_boundary(s.mu_u, dmu_u, c_comp, kBoundaryTau),
                         fraction_to_boundary(s.mu_l, dmu_l, c_comp, kBoundaryTau));

            StateVector x_try;
            bool ok = false;
            for (int halvings = 0; halvings <= 10; ++halvings) {
                x_try.values = s.x.values + a_p * dx;
                if (sys.voltage_ok(x_try)) {
                    ok = true;
                    break;
                }
                a_p *= 0.5;
            }
            if (!ok) {
                package(norm, total_it);
                return sol;
            }
            s.x = x_try;
            s.i_f += a_p * di_f;
            s.t += a_p * dt;
            s.lambda += a_d * dlam;
            s.mu_u += a_d * dmu_u;
            s.mu_l += a_d * dmu_l;
        }
        eps = std::max(eps * 0.2, cfg.epsilon_min);
    }
}

EnforcerVector assign_enforcers(const InfeasibilitySolution& solution, int k,
                                double c_high, double c_low) {
    const Vector mags = pfcore::injection_magnitudes(solution.i_f);
    const int n = static_cast<int>(mags.size());
    EnforcerVector e;
    e.provenance = EnforcerVector::Provenance::BusWise;
    e.c_high = c_high;
    e.c_low = c_low;
    if (k > n) {
        e.k_clamped = true;
        k = n;
    }
    if (k < 1) k = 1;

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (mags[a] != mags[b]) return mags[a] > mags[b];
        return a < b;
    });
    e.c = Vector::Constant(n, c_high);
    e.major.assign(order.begin(), order.begin() + k);
    std::sort(e.major.begin(), e.major.end());
    for (int j : e.major) e.c[j] = c_low;
    return e;
}

InfeasibilitySolution localize_k_sparse(const netmodel::Network& net,
                                        const InfeasibilitySolution& init, int k,
                                        const SparsityConfig& cfg,
                                        const SolverOptions& opts) {
    EcfSystem sys(net);
    return localize_k_sparse(sys, init, k, cfg, opts);
}

InfeasibilitySolution localize_k_sparse(const EcfSystem& sys,
                                        const InfeasibilitySolution& init, int k,
                                        const SparsityConfig& cfg,
                                        const SolverOptions& opts) {
    EnforcerVector enf = assign_enforcers(init, k, cfg.c_high, cfg.c_low);
    return solve_sparse(sys, enf, init, cfg, opts);
}

LocalizeResult localize(const netmodel::Network& net, const SparsityConfig& cfg,
                        const SolverOptions& opts) {
    EcfSystem sys(net);
    LocalizeResult result;

    InfeasibilitySolution current = pfcore::solve_l2(sys, ecf::InitMode::Flat, opts);
    if (current.status != SolveStatus::Converged) {
        result.solution = current;
        return result;
    }

    int k = static_cast<int>(
        std::ceil(static_cast<double>(net.n_bus()) * cfg.shrink_rate));
    k = std::max(k, 1);
    int prev_k_actual = -1;
    bool stabilized = false;

    for (int outer = 0; outer < cfg.max_outer; ++outer) {
        EnforcerVector enf = assign_enforcers(current, k, cfg.c_high, cfg.c_low);
        InfeasibilitySolution next = solve_sparse(sys, enf, current, cfg, opts);
        if (next.status != SolveStatus::Converged) {
            result.solution = current;
            result.solution.status = SolveStatus::Partial;
            return result;
        }
        int k_actual = sparsity_count(next, cfg.tau_sparse);
        result.trace.push_back({k, k_actual, next.objective});
        current = next;
        if (k_actual == prev_k_actual || k == 1) {
            stabilized = true;
            break;
        }
        prev_k_actual = k_actual;
        k = std::max(1, static_cast<int>(std::floor(
                            static_cast<double>(std::min(k, k_actual)) * cfg.shrink_rate)));
    }

    result.solution = current;
    if (!stabilized) result.solution.status = SolveStatus::Partial;
    return result;
}

int sparsity_count(const InfeasibilitySolution& solution, double tau) {
    const Vector mags = pfcore::injection_magnitudes(solution.i_f);
    int count = 0;
    for (Eigen::Index j = 0; j < mags.size(); ++j) {
        if (mags[j] > tau) ++count;
    }
    return count;
}

KktReport verify_kkt(const EcfSystem& sys, const InfeasibilitySolution& solution,
                     const EnforcerVector& c, double epsilon, double tau_active) {
    const auto& rows = sys.injection_rows();
    const int nif = sys.injection_set().dim();
    const Vector c_comp = c.per_component();
    const bool has_bounds = solution.t.size() == nif;

    KktReport rep;
    for (int j = 0; j < nif; ++j) {
        double lam = solution.lambda[rows[j]];
        double mu_u = has_bounds ? solution.mu_u[j] : 0.0;
        double mu_l = has_bounds ? solution.mu_l[j] : 0.0;
        rep.stationarity_if = std::max(
            rep.stationarity_if, std::abs(solution.i_f[j] + lam + mu_u - mu_l));
        rep.dual_feas = std::max(rep.dual_feas, std::abs(mu_u + mu_l - c_comp[j]));
        if (has_bounds && c_comp[j] > 0.0) {
            rep.comp_upper = std::max(
                rep.comp_upper,
                std::abs(mu_u * (solution.i_f[j] - solution.t[j]) + epsilon));
            rep.comp_lower = std::max(
                rep.comp_lower,
                std::abs(mu_l * (-solution.i_f[j] - solution.t[j]) + epsilon));
        }
        double abs_if = std::abs(solution.i_f[j]);
        double soft = std::abs(lam) - c_comp[j];
        if (abs_if > tau_active) {
            rep.threshold_gap = std::max(rep.threshold_gap, std::abs(abs_if - soft));
        } else {
            rep.blocked_excess = std::max(rep.blocked_excess, std::max(0.0, soft));
        }
    }

    Vector g = sys.residual(solution.x);
    for (int j = 0; j < nif; ++j) g[rows[j]] += solution.i_f[j];
    rep.primal_feas = g.lpNorm<Eigen::Infinity>();
    rep.stationarity_x =
        (sys.jacobian(solution.x).transpose() * solution.lambda).lpNorm<Eigen::Infinity>();
    return rep;
}

CalibrationResult calibrate_uniform(const EcfSystem& sys,
                                    const InfeasibilitySolution& warm, int target_count,
                                    const SparsityConfig& cfg, const SolverOptions& opts) {
    const int n_inj = static_cast<int>(sys.injection_set().buses.size());
    CalibrationResult result;

    auto count_at = [&](double c_value) {
        EnforcerVector enf = EnforcerVector::uniform(n_inj, c_value);
        InfeasibilitySolution sol = solve_sparse(sys, enf, warm, cfg, opts);
        int count = sol.status == SolveStatus::Converged
                        ? sparsity_count(sol, cfg.tau_sparse)
                        : -1;
        return std::make_pair(count, std::move(sol));
    };

    double lo = 1e-3;
    double hi = 1.0;
    auto [cnt_hi, sol_hi] = count_at(hi);
    int expand = 0;
    while (cnt_hi > target_count && expand++ < 16) {
        hi *= 2.0;
        std::tie(cnt_hi, sol_hi) = count_at(hi);
    }
    if (cnt_hi == target_count) {
        result.found = true;
        result.c = hi;
        result.solution = std::move(sol_hi);
        return result;
    }

    for (int it = 0; it < 60; ++it) {
        double mid = 0.5 * (lo + hi);
        auto [cnt, sol] = count_at(mid);
        if (cnt == target_count) {
            result.found = true;
            result.c = mid;
            result.solution = std::move(sol);
            return result;
        }
        if (cnt > target_count || cnt < 0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return result;
}

std::vector<std::pair<int, bool>> coupling_report(const InfeasibilitySolution& solution,
                                                  const EnforcerVector& c, double tau) {
    std::vector<std::pair<int, bool>> out;
    const Vector mags = pfcore::injection_magnitudes(solution.i_f);
    for (int j : c.major) {
        if (mags[j] <= tau) continue;
        bool both = std::abs(solution.i_f[2 * j]) > tau / 10.0 &&
                    std::abs(solution.i_f[2 * j + 1]) > tau / 10.0;
        out.emplace_back(j, both);
    }
    return out;
}

}  // namespace infloc::localizer
