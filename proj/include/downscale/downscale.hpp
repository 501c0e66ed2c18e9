#pragma once

// Umbrella header for the downscaling toolkit.

#include "error.hpp"
#include "schema.hpp"
#include "tables.hpp"
#include "csv.hpp"
#include "coarse_io.hpp"
#include "individual_io.hpp"
#include "aggregate.hpp"
#include "rng.hpp"
#include "distributions.hpp"
#include "coordinates.hpp"
#include "outlier.hpp"
#include "correlation.hpp"
#include "marginals.hpp"
#include "parallel.hpp"
#include "copula.hpp"
#include "predictor.hpp"
#include "batching.hpp"
#include "scaling.hpp"
#include "pipeline.hpp"
#include "evaluation.hpp"
#include "simulation.hpp"
#include "matching.hpp"
