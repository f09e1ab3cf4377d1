#pragma once

#include <Eigen/Core>

#include "infloc/ecf.hpp"
#include "infloc/netmodel.hpp"

namespace infloc::pfcore {

using ecf::StateVector;
using ecf::Vector;

struct SolverOptions {
    double tol = 1e-8;      ///< infinity-norm convergence tolerance
    int max_iter = 200;     ///< Newton iteration cap
    double damping = 0.5;   ///< max state step per iteration, pu
};

enum class SolveStatus { Converged, Diverged, Partial };

const char* to_string(SolveStatus status);

struct PowerFlowResult {
    SolveStatus status = SolveStatus::Diverged;
    StateVector x;
    int iterations = 0;
    double residual_norm = 0.0;
};

/// Converged bundle of an infeasibility-quantified solve. For the quadratic
/// (least-norm) solver t/mu_u/mu_l stay empty; the sparsity-enforcing solver
/// fills them.
struct InfeasibilitySolution {
    SolveStatus status = SolveStatus::Diverged;
    StateVector x;
    Vector i_f;        ///< injection components, interleaved (re, im) per bus
    Vector lambda;     ///< multiplier per constraint row
    Vector t, mu_u, mu_l;
    Vector per_bus_mag;  ///< sqrt(re^2 + im^2) per injection bus
    double objective = 0.0;
    int iterations = 0;
    double kkt_residual = 0.0;
};

/// Recomputes per-bus injection magnitudes from interleaved components.
Vector injection_magnitudes(const Vector& i_f);

/// Plain Newton-Raphson on the current-balance equations. Divergence is a
/// result, not an error: an infeasible network makes this solver diverge.
PowerFlowResult solve_powerflow(const netmodel::Network& net, const StateVector& x0,
                                const SolverOptions& opts = {});
PowerFlowResult solve_powerflow(const ecf::EcfSystem& sys, const StateVector& x0,
                                const SolverOptions& opts = {});

/// Least-norm infeasibility quantification: minimize 1/2 ||I_f||^2 subject to
/// the balance equations with injections added at every non-slack bus. Solved
/// by a damped-least-squares dense stage followed by Newton on the first-order
/// optimality system in (X, lambda) with I_f eliminated. If the flat start
/// fails, retries once from the case-file voltage profile.
InfeasibilitySolution solve_l2(const netmodel::Network& net,
                               const SolverOptions& opts = {});
InfeasibilitySolution solve_l2(const ecf::EcfSystem& sys, ecf::InitMode first_mode,
                               const SolverOptions& opts = {});

}  // namespace infloc::pfcore
