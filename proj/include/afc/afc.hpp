#pragma once

// Umbrella header for the incremental-learning lab.

#include "afc/bounds.hpp"
#include "afc/checkpoint.hpp"
#include "afc/commands.hpp"
#include "afc/config.hpp"
#include "afc/data.hpp"
#include "afc/importance.hpp"
#include "afc/io.hpp"
#include "afc/losses.hpp"
#include "afc/memory.hpp"
#include "afc/metrics.hpp"
#include "afc/network.hpp"
#include "afc/ops.hpp"
#include "afc/optim.hpp"
#include "afc/rng.hpp"
#include "afc/tape.hpp"
#include "afc/tensor.hpp"
#include "afc/trainer.hpp"
