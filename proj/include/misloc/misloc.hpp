#ifndef MISLOC_MISLOC_HPP_
#define MISLOC_MISLOC_HPP_

#include "misloc/analytic.hpp"
#include "misloc/covariate.hpp"
#include "misloc/error.hpp"
#include "misloc/io.hpp"
#include "misloc/model_core.hpp"
#include "misloc/population.hpp"
#include "misloc/regularized.hpp"
#include "misloc/simulator.hpp"
#include "misloc/solver.hpp"
#include "misloc/uncertainty.hpp"

#endif
