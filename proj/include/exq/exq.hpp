#pragma once

// Umbrella header for the exponential-quantization toolkit.

#include "exq/counting_dot.hpp"
#include "exq/dataset.hpp"
#include "exq/distfit.hpp"
#include "exq/engine.hpp"
#include "exq/error.hpp"
#include "exq/exq_io.hpp"
#include "exq/model.hpp"
#include "exq/npy.hpp"
#include "exq/quant.hpp"
#include "exq/report.hpp"
#include "exq/rng.hpp"
#include "exq/search.hpp"
#include "exq/tensor.hpp"
#include "exq/trace.hpp"
