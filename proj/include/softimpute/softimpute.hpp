#pragma once

#include "softimpute/errors.hpp"
#include "softimpute/factor_io.hpp"
#include "softimpute/lanczos_svd.hpp"
#include "softimpute/matrix_market.hpp"
#include "softimpute/postprocess.hpp"
#include "softimpute/prox.hpp"
#include "softimpute/simulate.hpp"
#include "softimpute/solvers.hpp"
#include "softimpute/sparse_ops.hpp"
