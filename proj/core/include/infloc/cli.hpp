#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "infloc/localizer.hpp"

namespace infloc::cli {

enum class Method { PowerFlow, L2, L1, BusWise, Auto };
enum class OutputFormat { Json, Csv, Text };

Method method_from_string(const std::string& s);
OutputFormat format_from_string(const std::string& s);
const char* to_string(Method m);

struct RunConfig {
    std::string case_path;
    double alpha = 1.0;
    Method method = Method::Auto;
    int k = 1;                  ///< sparse goal for the bus-wise method
    double c_uniform = 1.0;     ///< scalar enforcer for the L1 method
    double c_high = 10.0;
    double c_low = 0.1;
    double rate = 0.75;
    double tau_sparse = 1e-4;
    double tol = 1e-8;
    int max_iter = 200;
    OutputFormat output_format = OutputFormat::Text;
    std::string output_path;    ///< empty: write to stdout
};

struct BusRow {
    int bus_id = 0;         ///< external id
    double i_f_re = 0.0;
    double i_f_im = 0.0;
    double magnitude = 0.0;
    double c = 0.0;
    bool dominant = false;
};

struct SolveReport {
    std::string method;
    std::string case_name;
    int n_bus = 0;
    double alpha = 1.0;
    std::string status;
    int sparsity_count = 0;
    double objective = 0.0;
    int iterations = 0;
    localizer::KktReport kkt;
    std::vector<localizer::OuterTraceEntry> trace;
    std::vector<BusRow> buses;      ///< sorted by descending magnitude
    double wall_time_ms = 0.0;      ///< excluded from machine formats
};

/// Renders a report. The JSON schema is versioned and fully deterministic for
/// a given report (wall time is reported in the text format only).
std::string render(const SolveReport& report, OutputFormat format);

/// Loads, scales, solves, renders and writes. Returns the process exit code:
/// 0 converged, 2 diverged or partial, 1 unusable input. Failures print a
/// diagnostic to `err`.
int run(const RunConfig& config, std::ostream& out, std::ostream& err);

}  // namespace infloc::cli
