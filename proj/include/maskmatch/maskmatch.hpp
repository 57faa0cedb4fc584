#pragma once

#include "maskmatch/augment.hpp"
#include "maskmatch/checkpoint.hpp"
#include "maskmatch/config.hpp"
#include "maskmatch/data.hpp"
#include "maskmatch/errors.hpp"
#include "maskmatch/experiments.hpp"
#include "maskmatch/image.hpp"
#include "maskmatch/image_io.hpp"
#include "maskmatch/losses.hpp"
#include "maskmatch/mae.hpp"
#include "maskmatch/optim.hpp"
#include "maskmatch/rng.hpp"
#include "maskmatch/runner.hpp"
#include "maskmatch/sdt.hpp"
#include "maskmatch/step.hpp"
#include "maskmatch/tensor.hpp"
#include "maskmatch/threshold.hpp"
#include "maskmatch/trainer.hpp"
#include "maskmatch/utilization.hpp"
#include "maskmatch/vit.hpp"
