#pragma once

#include <optional>
#include <vector>

#include "infloc/ecf.hpp"
#include "infloc/pfcore.hpp"

namespace infloc::localizer {

using ecf::Vector;
using pfcore::InfeasibilitySolution;
using pfcore::SolveStatus;
using pfcore::SolverOptions;

/// Per-bus sparsity enforcer. c[i] applies identically to the real and
/// imaginary injection components of injection bus i (ordering as in
/// InjectionSet). Acts as a blocking threshold: a bus can carry infeasibility
/// current only where the multiplier magnitude exceeds c[i].
struct EnforcerVector {
    enum class Provenance { UniformScalar, BusWise };

    Vector c;                      ///< one entry per injection bus, >= 0
    Provenance provenance = Provenance::UniformScalar;
    double c_high = 0.0, c_low = 0.0;   ///< BusWise parameters
    std::vector<int> major;        ///< injection-bus positions assigned c_low
    bool k_clamped = false;        ///< sparse goal exceeded the injection count

    static EnforcerVector uniform(int n_injection_buses, double c_value);

    /// Per-component expansion (each bus entry duplicated for re/im).
    Vector per_component() const;
};

struct SparsityConfig {
    int k = 1;                 ///< sparse goal (target bus count)
    double c_high = 10.0;
    double c_low = 0.1;
    double shrink_rate = 0.75;         ///< in (0,1)
    double tau_sparse = 1e-4;          ///< per-bus magnitude counting threshold
    double epsilon0 = 1e-2;            ///< initial complementarity perturbation
    double epsilon_min = 1e-8;         ///< final perturbation
    double bound_margin = 0.1;         ///< slack above |I_f| when initializing t
    int max_outer = 30;                ///< outer-loop cap for localize()
};

/// Residual magnitudes of the perturbed optimality conditions plus the derived
/// soft-threshold identity. All entries are nonnegative maxima.
struct KktReport {
    double stationarity_if = 0.0;  ///< ||I_f + lambda + mu_U - mu_L||_inf
    double dual_feas = 0.0;        ///< ||mu_U + mu_L - c||_inf
    double comp_upper = 0.0;       ///< max |mu_U (I_f - t) + eps|
    double comp_lower = 0.0;       ///< max |mu_L (-I_f - t) + eps|
    double primal_feas = 0.0;      ///< ||g(X) + S I_f||_inf
    double stationarity_x = 0.0;   ///< ||J^T lambda||_inf
    double threshold_gap = 0.0;    ///< max over active comps of ||I_f| - (|lambda| - c)|
    double blocked_excess = 0.0;   ///< max over blocked comps of (|lambda| - c)+

    double max_condition_residual() const;  ///< max of the first six entries
};

struct Bounds {
    Vector t, mu_u, mu_l;
};

/// Strictly feasible bound/multiplier start: t = |i_f| + margin and an
/// interior split of each c between the two bound multipliers.
Bounds init_bounds(const Vector& i_f, const Vector& lambda_inj,
                   const Vector& c_per_component, double margin);

/// Sparsity-enforced infeasibility solve (uniform scalar or bus-wise c) by a
/// primal-dual Newton method on the perturbed optimality system with
/// fraction-to-boundary step control and a geometric perturbation schedule.
InfeasibilitySolution solve_sparse(const ecf::EcfSystem& sys, const EnforcerVector& c,
                                   const InfeasibilitySolution& warm,
                                   const SparsityConfig& cfg,
                                   const SolverOptions& opts = {});
InfeasibilitySolution solve_sparse(const netmodel::Network& net, const EnforcerVector& c,
                                   const InfeasibilitySolution& warm,
                                   const SparsityConfig& cfg,
                                   const SolverOptions& opts = {});

/// Classifies injection buses by infeasibility magnitude: the k largest get
/// c_low ("major"), the rest c_high ("minor"). Ties break toward the lower
/// internal bus index. k larger than the injection count is clamped.
EnforcerVector assign_enforcers(const InfeasibilitySolution& solution, int k,
                                double c_high, double c_low);

/// One enforcer assignment + sparse solve at a fixed k-sparse goal. The result
/// may carry more than k nonzero buses when the goal is not attainable.
InfeasibilitySolution localize_k_sparse(const ecf::EcfSystem& sys,
                                        const InfeasibilitySolution& init, int k,
                                        const SparsityConfig& cfg,
                                        const SolverOptions& opts = {});
InfeasibilitySolution localize_k_sparse(const netmodel::Network& net,
                                        const InfeasibilitySolution& init, int k,
                                        const SparsityConfig& cfg,
                                        const SolverOptions& opts = {});

struct OuterTraceEntry {
    int k_goal = 0;
    int k_actual = 0;
    double objective = 0.0;
};

struct LocalizeResult {
    InfeasibilitySolution solution;
    std::vector<OuterTraceEntry> trace;
    EnforcerVector final_enforcers;   ///< assignment used by the last stage
};

/// Full localization driver: least-norm warm start, then repeated enforcer
/// assignment and sparse solves with the sparse goal shrunk geometrically
/// until the achieved sparsity stabilizes or reaches one bus. Each stage is
/// warm-started from the previous solution. On a stage failure the last
/// converged solution is returned tagged Partial.
LocalizeResult localize(const netmodel::Network& net, const SparsityConfig& cfg,
                        const SolverOptions& opts = {});

/// Number of injection buses whose infeasibility magnitude exceeds tau.
int sparsity_count(const InfeasibilitySolution& solution, double tau);

/// Evaluates every optimality-condition residual of a solution bundle,
/// including the derived soft-threshold identity on components above
/// tau_active and the blocking bound on components below it.
KktReport verify_kkt(const ecf::EcfSystem& sys, const InfeasibilitySolution& solution,
                     const EnforcerVector& c, double epsilon,
                     double tau_active = 1e-4);

struct CalibrationResult {
    bool found = false;
    double c = 0.0;
    InfeasibilitySolution solution;
};

/// Bisects a uniform scalar enforcer until the solve lands on exactly
/// target_count nonzero buses. Every probe is warm-started from `warm`.
CalibrationResult calibrate_uniform(const ecf::EcfSystem& sys,
                                    const InfeasibilitySolution& warm, int target_count,
                                    const SparsityConfig& cfg,
                                    const SolverOptions& opts = {});

/// For each major bus with magnitude above tau: whether both of its components
/// are individually above tau/10 (observational, used in reports).
std::vector<std::pair<int, bool>> coupling_report(const InfeasibilitySolution& solution,
                                                  const EnforcerVector& c, double tau);

}  // namespace infloc::localizer
