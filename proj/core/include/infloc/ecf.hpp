#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <vector>

#include "infloc/netmodel.hpp"

namespace infloc::ecf {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

enum class InitMode { Flat, FromCase };

/// Real-valued unknowns of the current-balance formulation:
/// [vr(bus 0..n-1) | vi(bus 0..n-1) | qg(pv gen 0..npv-1) | pg_slack | qg_slack].
struct StateVector {
    Vector values;

    double norm_inf() const { return values.lpNorm<Eigen::Infinity>(); }
};

/// Buses that may carry infeasibility current: every non-slack bus, ascending
/// internal index. Component layout is interleaved: entry 2j is the real part
/// at buses[j], entry 2j+1 the imaginary part.
struct InjectionSet {
    std::vector<int> buses;
    int dim() const { return 2 * static_cast<int>(buses.size()); }
};

/// Assembled current-balance system for one network:
/// rows [real KCL per bus | imag KCL per bus | PV magnitude | slack vr | slack vi].
///
/// Residual and Jacobian evaluation are pure in (network, state) and safe to
/// call concurrently on distinct states.
class EcfSystem {
  public:
    explicit EcfSystem(const netmodel::Network& net);

    // ----- dimensions and row/column maps -----
    int n_bus() const { return n_; }
    int n_pv() const { return static_cast<int>(pv_.size()); }
    int n_eq() const { return 2 * n_ + n_pv() + 2; }
    int state_dim() const { return n_eq(); }

    int vr_index(int bus) const { return bus; }
    int vi_index(int bus) const { return n_ + bus; }
    int qg_index(int pv_ordinal) const { return 2 * n_ + pv_ordinal; }
    int pg_slack_index() const { return 2 * n_ + n_pv(); }
    int qg_slack_index() const { return 2 * n_ + n_pv() + 1; }

    int kcl_row(int bus, bool imag_part) const { return imag_part ? n_ + bus : bus; }
    int pv_row(int pv_ordinal) const { return 2 * n_ + pv_ordinal; }
    int slack_vr_row() const { return 2 * n_ + n_pv(); }
    int slack_vi_row() const { return 2 * n_ + n_pv() + 1; }

    int slack_bus() const { return slack_; }
    const std::vector<int>& pv_buses() const { return pv_; }
    const netmodel::Network& network() const { return *net_; }

    const InjectionSet& injection_set() const { return injections_; }
    /// Constraint row carrying injection component j (0-based, interleaved).
    int injection_row(int component) const { return inj_rows_[component]; }
    const std::vector<int>& injection_rows() const { return inj_rows_; }

    // ----- evaluation -----
    StateVector init_state(InitMode mode) const;

    /// Current mismatch of every constraint row. Throws VoltageCollapse if any
    /// |V| falls below the evaluation floor.
    Vector residual(const StateVector& x) const;

    /// Exact partial derivatives of residual() rows; the sparsity pattern is
    /// identical across calls for a fixed network.
    SparseMatrix jacobian(const StateVector& x) const;

    /// Sum over rows k of lambda[k] * Hess(residual_k); used by the
    /// Newton-on-optimality-conditions solvers.
    SparseMatrix hessian_lagrangian(const StateVector& x, const Vector& lambda) const;

    /// True if every bus voltage magnitude is above the evaluation floor.
    bool voltage_ok(const StateVector& x) const;

    static constexpr double kVoltageFloor = 1e-4;  // pu

  private:
    void check_voltage(const StateVector& x) const;

    const netmodel::Network* net_;
    int n_ = 0;
    int slack_ = -1;
    std::vector<int> pv_;           // internal bus indices with a PV machine
    std::vector<int> pv_ordinal_;   // bus -> ordinal in pv_, -1 otherwise
    InjectionSet injections_;
    std::vector<int> inj_rows_;

    // aggregated per-bus device data (per-unit)
    Vector load_p_, load_q_;
    Vector gen_p_;                  // PV active setpoints by pv ordinal
    Vector gen_q0_;                 // PV reactive warm-start by pv ordinal
    double slack_v_ = 1.0, slack_theta_ = 0.0;
    double slack_q0_ = 0.0, slack_p0_ = 0.0;

    // constant linear stamps (branches + bus shunts), n x n each
    SparseMatrix g_bus_, b_bus_;
    std::vector<Triplet> linear_triplets_;  // the fixed part of the Jacobian
};

}  // namespace infloc::ecf
