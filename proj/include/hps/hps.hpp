#pragma once

#include "hps/numeric.hpp"
#include "hps/io.hpp"
#include "hps/world.hpp"
#include "hps/ranking.hpp"
#include "hps/dataset.hpp"
#include "hps/reward.hpp"
#include "hps/losses.hpp"
#include "hps/trainer.hpp"
#include "hps/metrics.hpp"
#include "hps/experiments.hpp"
