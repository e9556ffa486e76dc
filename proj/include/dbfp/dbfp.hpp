#pragma once

// Umbrella header for the block-float toolkit.

#include "dbfp/format.hpp"
#include "dbfp/grouping.hpp"
#include "dbfp/dh_lut.hpp"
#include "dbfp/kernels.hpp"
#include "dbfp/pipeline_sim.hpp"
#include "dbfp/analysis.hpp"
#include "dbfp/io.hpp"
