#pragma once

#include "wenlex/tensor.hpp"
#include "wenlex/ops.hpp"
#include "wenlex/optim.hpp"
#include "wenlex/rng.hpp"
#include "wenlex/domain.hpp"
#include "wenlex/codec.hpp"
#include "wenlex/nn.hpp"
#include "wenlex/models.hpp"
#include "wenlex/losses.hpp"
#include "wenlex/checkpoint.hpp"
#include "wenlex/config.hpp"
#include "wenlex/dataset.hpp"
#include "wenlex/metrics.hpp"
#include "wenlex/trainer.hpp"
#include "wenlex/pipeline.hpp"
#include "wenlex/report.hpp"
