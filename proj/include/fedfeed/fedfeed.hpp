#pragma once

#include "fedfeed/config.hpp"
#include "fedfeed/dataset.hpp"
#include "fedfeed/errors.hpp"
#include "fedfeed/experiment.hpp"
#include "fedfeed/federation.hpp"
#include "fedfeed/feedback.hpp"
#include "fedfeed/losses.hpp"
#include "fedfeed/model.hpp"
#include "fedfeed/rng.hpp"
#include "fedfeed/training.hpp"
