#pragma once

#include "dpcalib/error.hpp"
#include "dpcalib/specfun.hpp"
#include "dpcalib/types.hpp"
#include "dpcalib/exact_core.hpp"
#include "dpcalib/quadrature.hpp"
#include "dpcalib/tsmm.hpp"
#include "dpcalib/weights.hpp"
#include "dpcalib/optim.hpp"
#include "dpcalib/refine.hpp"
#include "dpcalib/bounds.hpp"
#include "dpcalib/mc_oracle.hpp"
#include "dpcalib/report.hpp"
