#pragma once

// Umbrella header for the numerical core.

#include "specfield/constants.hpp"
#include "specfield/errors.hpp"
#include "specfield/fft.hpp"
#include "specfield/grid.hpp"
#include "specfield/inference.hpp"
#include "specfield/model.hpp"
#include "specfield/operators.hpp"
#include "specfield/optimizer.hpp"
#include "specfield/posterior.hpp"
#include "specfield/priors.hpp"
#include "specfield/rng.hpp"
#include "specfield/synth.hpp"
