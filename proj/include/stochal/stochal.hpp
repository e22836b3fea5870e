#pragma once

#include "stochal/active_loop.hpp"
#include "stochal/datasets.hpp"
#include "stochal/diagnostics.hpp"
#include "stochal/errors.hpp"
#include "stochal/model.hpp"
#include "stochal/rng.hpp"
#include "stochal/sampling.hpp"
#include "stochal/scoring.hpp"
