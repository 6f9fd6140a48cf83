#pragma once

#include "claims.hpp"
#include "inference.hpp"
#include "priors.hpp"
#include "reporting.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "selection.hpp"
#include "special.hpp"
