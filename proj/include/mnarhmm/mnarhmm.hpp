#pragma once

#include "mnarhmm/error.hpp"
#include "mnarhmm/math.hpp"
#include "mnarhmm/model.hpp"
#include "mnarhmm/inference.hpp"
#include "mnarhmm/logit_fit.hpp"
#include "mnarhmm/parallel.hpp"
#include "mnarhmm/estimation.hpp"
#include "mnarhmm/simulation.hpp"
#include "mnarhmm/selection.hpp"
#include "mnarhmm/dataio.hpp"
