#pragma once

// Umbrella header: the whole library.

#include "error.hpp"
#include "stats.hpp"
#include "rng.hpp"
#include "parallel.hpp"
#include "geometry.hpp"
#include "lattice.hpp"
#include "weights.hpp"
#include "design.hpp"
#include "session.hpp"
#include "fit.hpp"
#include "meta.hpp"
#include "phantom.hpp"
#include "nifti.hpp"
#include "session_io.hpp"
#include "field_io.hpp"
#include "phantom_io.hpp"
#include "config.hpp"
