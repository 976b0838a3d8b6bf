#pragma once

// Umbrella header.

#include "dichotomy.hpp"
#include "errors.hpp"
#include "evolution.hpp"
#include "expr.hpp"
#include "growth.hpp"
#include "linalg.hpp"
#include "linearize.hpp"
#include "report.hpp"
#include "rescale.hpp"
#include "spectrum.hpp"
#include "sysdef.hpp"
