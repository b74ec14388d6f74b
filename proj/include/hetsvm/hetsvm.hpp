#pragma once

#include "hetsvm/design.hpp"
#include "hetsvm/effects.hpp"
#include "hetsvm/errors.hpp"
#include "hetsvm/lasso.hpp"
#include "hetsvm/simulation.hpp"
#include "hetsvm/svm.hpp"
#include "hetsvm/tuning.hpp"
#include "hetsvm/version.hpp"
