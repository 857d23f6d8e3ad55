#pragma once

#include "mcis/batch_means.hpp"
#include "mcis/chain.hpp"
#include "mcis/density.hpp"
#include "mcis/errors.hpp"
#include "mcis/gen_is.hpp"
#include "mcis/linalg.hpp"
#include "mcis/parallel.hpp"
#include "mcis/regen.hpp"
#include "mcis/reverse_logistic.hpp"
#include "mcis/rng.hpp"
#include "mcis/samplers.hpp"
#include "mcis/weights.hpp"
