#pragma once

#include <stdexcept>
#include <string>

namespace infloc {

/// Case file could not be parsed (syntax error, missing table).
struct MalformedCase : std::runtime_error {
    explicit MalformedCase(const std::string& what) : std::runtime_error(what) {}
};

/// Parsed data violates a structural network invariant.
struct InvalidTopology : std::runtime_error {
    explicit InvalidTopology(const std::string& what) : std::runtime_error(what) {}
};

/// Loading factor outside (0, inf).
struct InvalidAlpha : std::runtime_error {
    explicit InvalidAlpha(const std::string& what) : std::runtime_error(what) {}
};

/// A bus voltage magnitude fell below the evaluation floor; the evaluation
/// point left the trusted region of the 1/|V|^2 device models.
struct VoltageCollapse : std::runtime_error {
    explicit VoltageCollapse(const std::string& what, int bus = -1)
        : std::runtime_error(what), bus(bus) {}
    int bus;
};

/// Sparse LU hit a zero pivot beyond tolerance.
struct SingularMatrix : std::runtime_error {
    explicit SingularMatrix(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace infloc
