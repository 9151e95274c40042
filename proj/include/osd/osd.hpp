#pragma once

// Umbrella header for the library (the CLI layer lives in osd/cli.hpp).

#include "osd/anticipated.hpp"
#include "osd/config.hpp"
#include "osd/covariance.hpp"
#include "osd/criteria.hpp"
#include "osd/error.hpp"
#include "osd/evalbench.hpp"
#include "osd/io.hpp"
#include "osd/mat_kernel.hpp"
#include "osd/matrix.hpp"
#include "osd/optimizer.hpp"
#include "osd/risk.hpp"
#include "osd/rng.hpp"
#include "osd/sampling.hpp"
#include "osd/sequential.hpp"
#include "osd/synth.hpp"
