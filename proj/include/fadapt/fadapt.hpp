#pragma once

#include "fadapt/error.hpp"
#include "fadapt/rng.hpp"
#include "fadapt/tensor.hpp"
#include "fadapt/ops.hpp"
#include "fadapt/gradcheck.hpp"
#include "fadapt/container.hpp"
#include "fadapt/optim.hpp"
#include "fadapt/schedule.hpp"
#include "fadapt/fusion.hpp"
#include "fadapt/margin_loss.hpp"
#include "fadapt/backbone.hpp"
#include "fadapt/turbsim.hpp"
#include "fadapt/restore.hpp"
#include "fadapt/datagen.hpp"
#include "fadapt/eval.hpp"
#include "fadapt/trainer.hpp"
#include "fadapt/experiment.hpp"
#include "fadapt/pipeline_check.hpp"
#include "fadapt/config.hpp"
#include "fadapt/harness.hpp"
