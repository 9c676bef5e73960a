#pragma once

#include "kzr/checkpoint.hpp"
#include "kzr/config.hpp"
#include "kzr/dataset.hpp"
#include "kzr/decoder.hpp"
#include "kzr/encoder.hpp"
#include "kzr/grad_check.hpp"
#include "kzr/image.hpp"
#include "kzr/metrics.hpp"
#include "kzr/model.hpp"
#include "kzr/ops.hpp"
#include "kzr/optim.hpp"
#include "kzr/params.hpp"
#include "kzr/synth.hpp"
#include "kzr/tensor.hpp"
#include "kzr/trainer.hpp"
#include "kzr/vocab.hpp"
