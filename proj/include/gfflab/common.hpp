#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gfflab {

inline constexpr const char* version_string = "0.1.0";

/// Raised when a numerical routine cannot meet its accuracy or
/// definiteness contract (quadrature non-convergence, Cholesky failure
/// after the jitter policy, solver disagreement).
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

/// Raised for invalid run configuration (sizes over limits, search radii
/// too small, bad padding factors).
struct config_error : std::invalid_argument {
    explicit config_error(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when an operation's mathematical precondition is violated
/// (empty sets, non-disjoint sets, out-of-domain parameters).
struct domain_error : std::invalid_argument {
    explicit domain_error(const std::string& what) : std::invalid_argument(what) {}
};

} // namespace gfflab
