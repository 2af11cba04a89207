#pragma once

#include <string>

#include "r1t/kernels.hpp"

namespace r1t {

// Human-readable backend name ("omp" / "serial").
std::string backend_name(kernels::Backend b);

// Parses "omp" or "serial"; throws UsageError otherwise.
kernels::Backend parse_backend(const std::string& s);

// One-line summary of the compute configuration, for logs and version output.
std::string runtime_summary();

}  // namespace r1t
