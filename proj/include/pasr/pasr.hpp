#pragma once

#include "pasr/autodiff.hpp"
#include "pasr/config.hpp"
#include "pasr/dataset.hpp"
#include "pasr/geocode.hpp"
#include "pasr/gridmap.hpp"
#include "pasr/metrics.hpp"
#include "pasr/model.hpp"
#include "pasr/objective.hpp"
#include "pasr/sampling.hpp"
#include "pasr/sequences.hpp"
#include "pasr/synthetic.hpp"
#include "pasr/train.hpp"
