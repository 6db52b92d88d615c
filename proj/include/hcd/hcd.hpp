// Umbrella header for the hierarchical contrastive dehazing library.
#pragma once

#include "hcd/asm_model.hpp"
#include "hcd/autograd.hpp"
#include "hcd/cli.hpp"
#include "hcd/common.hpp"
#include "hcd/config.hpp"
#include "hcd/dataset.hpp"
#include "hcd/evaluate.hpp"
#include "hcd/image.hpp"
#include "hcd/image_io.hpp"
#include "hcd/layers.hpp"
#include "hcd/losses.hpp"
#include "hcd/metrics.hpp"
#include "hcd/network.hpp"
#include "hcd/ops.hpp"
#include "hcd/optim.hpp"
#include "hcd/perceptual.hpp"
#include "hcd/rng.hpp"
#include "hcd/serialize.hpp"
#include "hcd/tensor.hpp"
#include "hcd/train.hpp"
