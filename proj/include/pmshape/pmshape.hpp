#pragma once

#include "pmshape/types.hpp"
#include "pmshape/numeric.hpp"
#include "pmshape/geometry.hpp"
#include "pmshape/shape_prior.hpp"
#include "pmshape/likelihood.hpp"
#include "pmshape/proposal.hpp"
#include "pmshape/sampler.hpp"
#include "pmshape/analysis.hpp"
#include "pmshape/io.hpp"
#include "pmshape/dataset.hpp"
#include "pmshape/config.hpp"
#include "pmshape/commands.hpp"
