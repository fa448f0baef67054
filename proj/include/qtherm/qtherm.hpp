#pragma once

#include "qtherm/lattice.hpp"
#include "qtherm/fft.hpp"
#include "qtherm/rng.hpp"
#include "qtherm/model.hpp"
#include "qtherm/propagator.hpp"
#include "qtherm/weakfields.hpp"
#include "qtherm/diagnostics.hpp"
#include "qtherm/comframe.hpp"
#include "qtherm/scenario.hpp"
#include "qtherm/runner.hpp"
