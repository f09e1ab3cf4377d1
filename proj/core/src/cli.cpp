#include "infloc/cli.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace infloc::cli {

using nlohmann::ordered_json;

Method method_from_string(const std::string& s) {
    if (s == "pf") return Method::PowerFlow;
    if (s == "l2") return Method::L2;
    if (s == "l1") return Method::L1;
    if (s == "buswise") return Method::BusWise;
    if (s == "auto") return Method::Auto;
    throw std::invalid_argument("unknown method '" + s + "'");
}

OutputFormat format_from_string(const std::string& s) {
    if (s == "json") return OutputFormat::Json;
    if (s == "csv") return OutputFormat::Csv;
    if (s == "text") return OutputFormat::Text;
    throw std::invalid_argument("unknown output format '" + s + "'");
}

const char* to_string(Method m) {
    switch (m) {
        case Method::PowerFlow: return "pf";
        case Method::L2: return "l2";
        case Method::L1: return "l1";
        case Method::BusWise: return "buswise";
        case Method::Auto: return "auto";
    }
    return "?";
}

namespace {

constexpr int kReportSchemaVersion = 1;

// magnitudes are rendered as decimal strings with 10 significant digits
std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string render_json(const SolveReport& r) {
    ordered_json j;
    j["schema_version"] = kReportSchemaVersion;
    j["method"] = r.method;
    j["case"] = r.case_name;
    j["n_bus"] = r.n_bus;
    j["alpha"] = num(r.alpha);
    j["status"] = r.status;
    j["sparsity_count"] = r.sparsity_count;
    j["objective"] = num(r.objective);
    j["iterations"] = r.iterations;
    j["kkt"] = {{"stationarity_if", num(r.kkt.stationarity_if)},
                {"dual_feasibility", num(r.kkt.dual_feas)},
                {"complementarity_upper", num(r.kkt.comp_upper)},
                {"complementarity_lower", num(r.kkt.comp_lower)},
                {"primal_feasibility", num(r.kkt.primal_feas)},
                {"stationarity_x", num(r.kkt.stationarity_x)},
                {"threshold_gap", num(r.kkt.threshold_gap)},
                {"blocked_excess", num(r.kkt.blocked_excess)}};
    j["trace"] = ordered_json::array();
    for (const auto& t : r.trace) {
        j["trace"].push_back({{"k_goal", t.k_goal},
                              {"k_actual", t.k_actual},
                              {"objective", num(t.objective)}});
    }
    j["buses"] = ordered_json::array();
    for (const auto& row : r.buses) {
        j["buses"].push_back({{"id", row.bus_id},
                              {"i_f_real", num(row.i_f_re)},
                              {"i_f_imag", num(row.i_f_im)},
                              {"magnitude", num(row.magnitude)},
                              {"c", num(row.c)},
                              {"dominant", row.dominant}});
    }
    return j.dump(2) + "\n";
}

std::string render_csv(const SolveReport& r) {
    std::ostringstream out;
    out << "bus_id,i_f_real,i_f_imag,magnitude,c,dominant\n";
    for (const auto& row : r.buses) {
        out << row.bus_id << ',' << num(row.i_f_re) << ',' << num(row.i_f_im) << ','
            << num(row.magnitude) << ',' << num(row.c) << ','
            << (row.dominant ? 1 : 0) << '\n';
    }
    return out.str();
}

std::string render_text(const SolveReport& r) {
    std::ostringstream out;
    out << "case: " << r.case_name << "  (" << r.n_bus << " buses, alpha = "
        << num(r.alpha) << ")\n";
    out << "method: " << r.method << "  status: " << r.status << "  iterations: "
        << r.iterations << "\n";
    out << "objective: " << num(r.objective)
        << "  sparsity count: " << r.sparsity_count << "\n";
    out << "kkt: stationarity " << num(std::max(r.kkt.stationarity_if, r.kkt.stationarity_x))
        << "  primal " << num(r.kkt.primal_feas) << "  threshold gap "
        << num(r.kkt.threshold_gap) << "\n";
    if (!r.trace.empty()) {
        out << "outer trace (k_goal -> k_actual):";
        for (const auto& t : r.trace) out << ' ' << t.k_goal << "->" << t.k_actual;
        out << "\n";
    }
    if (!r.buses.empty()) {
        out << '\n'
            << std::setw(8) << "bus" << std::setw(16) << "I_f_real" << std::setw(16)
            << "I_f_imag" << std::setw(16) << "|I_f|" << std::setw(12) << "c"
            << std::setw(10) << "dominant" << '\n';
        for (const auto& row : r.buses) {
            out << std::setw(8) << row.bus_id << std::setw(16) << num(row.i_f_re)
                << std::setw(16) << num(row.i_f_im) << std::setw(16)
                << num(row.magnitude) << std::setw(12) << num(row.c) << std::setw(10)
                << (row.dominant ? "yes" : "") << '\n';
        }
    }
    out << "\nwall time: " << std::fixed << std::setprecision(1) << r.wall_time_ms
        << " ms\n";
    return out.str();
}

std::vector<BusRow> build_bus_rows(const netmodel::Network& net,
                                   const ecf::EcfSystem& sys,
                                   const pfcore::InfeasibilitySolution& sol,
                                   const localizer::EnforcerVector* enf, double tau) {
    std::vector<BusRow> rows;
    const auto& inj = sys.injection_set().buses;
    for (size_t j = 0; j < inj.size(); ++j) {
        BusRow row;
        row.bus_id = net.id_of(inj[j]);
        row.i_f_re = sol.i_f[2 * j];
        row.i_f_im = sol.i_f[2 * j + 1];
        row.magnitude = sol.per_bus_mag[j];
        row.c = enf ? enf->c[static_cast<Eigen::Index>(j)] : 0.0;
        row.dominant = row.magnitude > tau;
        rows.push_back(row);
    }
    std::stable_sort(rows.begin(), rows.end(), [](const BusRow& a, const BusRow& b) {
        if (a.magnitude != b.magnitude) return a.magnitude > b.magnitude;
        return a.bus_id < b.bus_id;
    });
    return rows;
}

}  // namespace

std::string render(const SolveReport& report, OutputFormat format) {
    switch (format) {
        case OutputFormat::Json: return render_json(report);
        case OutputFormat::Csv: return render_csv(report);
        case OutputFormat::Text: return render_text(report);
    }
    return {};
}

int run(const RunConfig& config, std::ostream& out, std::ostream& err) {
    using clock = std::chrono::steady_clock;
    SolveReport report;
    report.method = to_string(config.method);

    netmodel::Network net;
    try {
        net = netmodel::load_case(config.case_path);
        auto diags = netmodel::validate(net);
        if (!diags.empty()) {
            for (const auto& d : diags) {
                err << "invalid network: " << netmodel::to_string(d.code) << ": "
                    << d.message << "\n";
            }
            return 1;
        }
        net = netmodel::scale_loading(net, config.alpha);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }

    report.case_name = net.name.empty() ? config.case_path : net.name;
    report.n_bus = net.n_bus();
    report.alpha = net.alpha;

    SolverOptions opts;
    opts.tol = config.tol;
    opts.max_iter = config.max_iter;

    localizer::SparsityConfig cfg;
    cfg.k = config.k;
    cfg.c_high = config.c_high;
    cfg.c_low = config.c_low;
    cfg.shrink_rate = config.rate;
    cfg.tau_sparse = config.tau_sparse;

    SolveStatus status = SolveStatus::Diverged;
    const auto t0 = clock::now();
    try {
        ecf::EcfSystem sys(net);
        if (config.method == Method::PowerFlow) {
            auto pf = pfcore::solve_powerflow(sys, sys.init_state(ecf::InitMode::Flat), opts);
            status = pf.status;
            report.iterations = pf.iterations;
            report.kkt.primal_feas = pf.residual_norm;
        } else {
            pfcore::InfeasibilitySolution sol;
            localizer::EnforcerVector enf;
            bool have_enf = false;
            if (config.method == Method::L2) {
                sol = pfcore::solve_l2(sys, ecf::InitMode::Flat, opts);
            } else if (config.method == Method::L1) {
                auto warm = pfcore::solve_l2(sys, ecf::InitMode::Flat, opts);
                if (warm.status != SolveStatus::Converged) {
                    sol = warm;
                } else {
                    enf = localizer::EnforcerVector::uniform(
                        static_cast<int>(sys.injection_set().buses.size()),
                        config.c_uniform);
                    have_enf = true;
                    sol = localizer::solve_sparse(sys, enf, warm, cfg, opts);
                }
            } else if (config.method == Method::BusWise) {
                auto warm = pfcore::solve_l2(sys, ecf::InitMode::Flat, opts);
                if (warm.status != SolveStatus::Converged) {
                    sol = warm;
                } else {
                    enf = localizer::assign_enforcers(warm, config.k, config.c_high,
                                                      config.c_low);
                    have_enf = true;
                    sol = localizer::solve_sparse(sys, enf, warm, cfg, opts);
                }
            } else {
                auto loc = localizer::localize(net, cfg, opts);
                sol = loc.solution;
                report.trace = loc.trace;
                if (!loc.trace.empty()) {
                    // reconstruct the final stage's enforcers for the report
                    enf = localizer::assign_enforcers(sol, loc.trace.back().k_goal,
                                                      config.c_high, config.c_low);
                    have_enf = true;
                }
            }
            status = sol.status;
            report.iterations = sol.iterations;
            report.objective = sol.objective;
            if (sol.i_f.size() > 0) {
                report.sparsity_count = localizer::sparsity_count(sol, config.tau_sparse);
                localizer::EnforcerVector zero = localizer::EnforcerVector::uniform(
                    static_cast<int>(sys.injection_set().buses.size()), 0.0);
                report.kkt = localizer::verify_kkt(sys, sol, have_enf ? enf : zero,
                                                   sol.t.size() > 0 ? cfg.epsilon_min : 0.0,
                                                   config.tau_sparse);
                report.buses = build_bus_rows(net, sys, sol, have_enf ? &enf : nullptr,
                                              config.tau_sparse);
            }
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    report.status = pfcore::to_string(status);
    report.wall_time_ms =
        std::chrono::duration<double, std::milli>(clock::now() - t0).count();

    std::string rendered = render(report, config.output_format);
    if (config.output_path.empty()) {
        out << rendered;
    } else {
        std::ofstream file(config.output_path, std::ios::binary);
        if (!file) {
            err << "error: cannot write " << config.output_path << "\n";
            return 1;
        }
        file << rendered;
    }
    return status == SolveStatus::Converged ? 0 : 2;
}

}  // namespace infloc::cli
