#pragma once

// Umbrella header for the cross-modal distillation library.

#include "cmkd/ablation.hpp"
#include "cmkd/checkpoint.hpp"
#include "cmkd/config.hpp"
#include "cmkd/data.hpp"
#include "cmkd/error.hpp"
#include "cmkd/gradcheck.hpp"
#include "cmkd/instrument.hpp"
#include "cmkd/losses.hpp"
#include "cmkd/metrics.hpp"
#include "cmkd/model.hpp"
#include "cmkd/optimizer.hpp"
#include "cmkd/prototypes.hpp"
#include "cmkd/random.hpp"
#include "cmkd/report.hpp"
#include "cmkd/task.hpp"
#include "cmkd/tensor.hpp"
#include "cmkd/training.hpp"
