#pragma once

#include "netfield/covariance.hpp"
#include "netfield/criteria.hpp"
#include "netfield/error.hpp"
#include "netfield/fem.hpp"
#include "netfield/graph.hpp"
#include "netfield/inference.hpp"
#include "netfield/io.hpp"
#include "netfield/metrics.hpp"
#include "netfield/pipeline.hpp"
#include "netfield/priors.hpp"
#include "netfield/random.hpp"
#include "netfield/sparse.hpp"
