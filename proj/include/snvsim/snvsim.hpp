// snvsim.hpp - umbrella include
#pragma once

#include "calibrate.hpp"
#include "engine.hpp"
#include "errors.hpp"
#include "fit.hpp"
#include "hashing.hpp"
#include "io.hpp"
#include "kv.hpp"
#include "ple.hpp"
#include "pulse.hpp"
#include "rates.hpp"
#include "rng.hpp"
#include "units.hpp"
