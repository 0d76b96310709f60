#pragma once

#include "sofar/errors.hpp"
#include "sofar/linalg.hpp"
#include "sofar/random.hpp"
#include "sofar/penalty.hpp"
#include "sofar/lasso.hpp"
#include "sofar/solver.hpp"
#include "sofar/tuning.hpp"
#include "sofar/simgen.hpp"
#include "sofar/metrics.hpp"
#include "sofar/baselines.hpp"
#include "sofar/simulation.hpp"
#include "sofar/io.hpp"
