#include "r1t/runtime.hpp"

#include <sstream>

#include "r1t/errors.hpp"

namespace r1t {

std::string backend_name(kernels::Backend b) {
  return b == kernels::Backend::omp ? "omp" : "serial";
}

kernels::Backend parse_backend(const std::string& s) {
  if (s == "omp") return kernels::Backend::omp;
  if (s == "serial") return kernels::Backend::serial;
  throw UsageError(msg("unknown backend '", s, "' (expected omp or serial)"));
}

std::string runtime_summary() {
  std::ostringstream os;
  os << "backend=" << backend_name(kernels::backend()) << " threads=" << kernels::thread_count();
  return os.str();
}

}  // namespace r1t
