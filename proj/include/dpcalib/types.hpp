#pragma once

#include <cmath>
#include <sstream>

#include "dpcalib/error.hpp"

namespace dpcalib {

/// Gamma(a, b) prior on the concentration parameter, shape-rate convention (mean a/b).
struct GammaHyperprior {
  double a = 1.0;
  double b = 1.0;

  double mean() const { return a / b; }
  double variance() const { return a / (b * b); }

  void validate() const {
    if (!(std::isfinite(a) && std::isfinite(b) && a > 0.0 && b > 0.0)) {
      std::ostringstream os;
      os << "Gamma hyperprior requires a > 0 and b > 0, got (" << a << ", " << b << ")";
      throw DomainError(os.str());
    }
  }

  friend bool operator==(const GammaHyperprior&, const GammaHyperprior&) = default;
};

}  // namespace dpcalib
