#pragma once

#include "haspn/archive.hpp"
#include "haspn/autograd.hpp"
#include "haspn/checkpoint.hpp"
#include "haspn/config.hpp"
#include "haspn/dataio.hpp"
#include "haspn/error.hpp"
#include "haspn/frequency.hpp"
#include "haspn/image.hpp"
#include "haspn/losses.hpp"
#include "haspn/metrics.hpp"
#include "haspn/model.hpp"
#include "haspn/ops.hpp"
#include "haspn/optim.hpp"
#include "haspn/png_io.hpp"
#include "haspn/rng.hpp"
#include "haspn/tensor.hpp"
#include "haspn/trainer.hpp"
