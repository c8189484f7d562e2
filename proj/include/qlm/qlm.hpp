#pragma once

#include "qlm/curvature.hpp"
#include "qlm/error.hpp"
#include "qlm/fields.hpp"
#include "qlm/grid.hpp"
#include "qlm/nonlinearity.hpp"
#include "qlm/ode.hpp"
#include "qlm/operators.hpp"
#include "qlm/solver.hpp"
#include "qlm/verifier.hpp"
