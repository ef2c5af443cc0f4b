#pragma once

#include "rsoc/adjoint.hpp"
#include "rsoc/backward.hpp"
#include "rsoc/config.hpp"
#include "rsoc/error.hpp"
#include "rsoc/experiment.hpp"
#include "rsoc/expression.hpp"
#include "rsoc/forward.hpp"
#include "rsoc/hjb.hpp"
#include "rsoc/io.hpp"
#include "rsoc/jets.hpp"
#include "rsoc/oracles.hpp"
#include "rsoc/parallel.hpp"
#include "rsoc/probes.hpp"
#include "rsoc/problem.hpp"
#include "rsoc/registry.hpp"
#include "rsoc/regression.hpp"
#include "rsoc/rng.hpp"
