#pragma once

// Umbrella header.

#include "resfeat/autodiff.hpp"
#include "resfeat/blocks.hpp"
#include "resfeat/checkpoint.hpp"
#include "resfeat/config.hpp"
#include "resfeat/conv.hpp"
#include "resfeat/data.hpp"
#include "resfeat/error.hpp"
#include "resfeat/exec.hpp"
#include "resfeat/network.hpp"
#include "resfeat/nn_ops.hpp"
#include "resfeat/params.hpp"
#include "resfeat/random.hpp"
#include "resfeat/scheme.hpp"
#include "resfeat/solver.hpp"
#include "resfeat/tensor.hpp"
#include "resfeat/train.hpp"
