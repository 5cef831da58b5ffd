#pragma once

// Umbrella header for the whole library.

#include "diflab/ad.hpp"
#include "diflab/common.hpp"
#include "diflab/dif.hpp"
#include "diflab/gmm.hpp"
#include "diflab/grid.hpp"
#include "diflab/io.hpp"
#include "diflab/maps.hpp"
#include "diflab/mlp.hpp"
#include "diflab/objectives.hpp"
#include "diflab/params.hpp"
#include "diflab/random.hpp"
#include "diflab/serialize.hpp"
#include "diflab/targets.hpp"
#include "diflab/train.hpp"
#include "diflab/weightnet.hpp"
