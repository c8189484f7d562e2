#pragma once

#include "qlm/harness/analytic.hpp"
#include "qlm/harness/config_format.hpp"
#include "qlm/harness/dump.hpp"
#include "qlm/harness/experiment.hpp"
#include "qlm/harness/manifest.hpp"
#include "qlm/harness/report.hpp"
#include "qlm/harness/run.hpp"
