#pragma once

// Umbrella header: the full library.

#include "effnas/arch/count.hpp"
#include "effnas/arch/io.hpp"
#include "effnas/arch/model.hpp"
#include "effnas/arch/spec.hpp"
#include "effnas/core/checkpoint.hpp"
#include "effnas/core/error.hpp"
#include "effnas/core/ops.hpp"
#include "effnas/core/tensor.hpp"
#include "effnas/lut/bench.hpp"
#include "effnas/lut/space_keys.hpp"
#include "effnas/lut/table.hpp"
#include "effnas/nn/attention.hpp"
#include "effnas/nn/blocks.hpp"
#include "effnas/nn/ops.hpp"
#include "effnas/search/pipeline.hpp"
#include "effnas/slim/slim.hpp"
#include "effnas/slim/supernet_eval.hpp"
#include "effnas/supernet/gumbel.hpp"
#include "effnas/supernet/space.hpp"
#include "effnas/supernet/supernet.hpp"
#include "effnas/train/data.hpp"
#include "effnas/train/optim.hpp"
#include "effnas/train/trainer.hpp"
