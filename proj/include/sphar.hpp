#pragma once

#include "sphar/errors.hpp"
#include "sphar/harmonics.hpp"
#include "sphar/rng.hpp"
#include "sphar/parallel.hpp"
#include "sphar/model.hpp"
#include "sphar/simulate.hpp"
#include "sphar/estimate.hpp"
#include "sphar/analysis.hpp"
#include "sphar/config.hpp"
#include "sphar/runner.hpp"
#include "sphar/version.hpp"
