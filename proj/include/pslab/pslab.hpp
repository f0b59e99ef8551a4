#pragma once

#include "pslab/augment/augment.hpp"
#include "pslab/csv.hpp"
#include "pslab/datakit/dataset.hpp"
#include "pslab/datakit/io.hpp"
#include "pslab/datakit/synthetic.hpp"
#include "pslab/errors.hpp"
#include "pslab/evalkit/metrics.hpp"
#include "pslab/evalkit/profile.hpp"
#include "pslab/evalkit/trace.hpp"
#include "pslab/numgrad/ops.hpp"
#include "pslab/numgrad/optim.hpp"
#include "pslab/numgrad/tensor.hpp"
#include "pslab/poisonforge/attack.hpp"
#include "pslab/poisonforge/modify.hpp"
#include "pslab/poisonforge/trigger.hpp"
#include "pslab/rng.hpp"
#include "pslab/trainers/dynamics.hpp"
#include "pslab/trainers/fixmatch.hpp"
#include "pslab/trainers/losses.hpp"
#include "pslab/trainers/model.hpp"
