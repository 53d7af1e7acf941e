// Umbrella header.
#pragma once

#include <regpinn/dataio.hpp>
#include <regpinn/error.hpp>
#include <regpinn/eval.hpp>
#include <regpinn/fit.hpp>
#include <regpinn/models.hpp>
#include <regpinn/nn.hpp>
#include <regpinn/timeutil.hpp>
#include <regpinn/train.hpp>
