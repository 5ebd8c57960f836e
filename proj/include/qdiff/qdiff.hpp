#pragma once

#include "qdiff/checkpoint.hpp"
#include "qdiff/commands.hpp"
#include "qdiff/config.hpp"
#include "qdiff/data.hpp"
#include "qdiff/diffusion.hpp"
#include "qdiff/error.hpp"
#include "qdiff/metrics.hpp"
#include "qdiff/ops.hpp"
#include "qdiff/optim.hpp"
#include "qdiff/quantum.hpp"
#include "qdiff/quantum_layer.hpp"
#include "qdiff/rng.hpp"
#include "qdiff/tensor.hpp"
#include "qdiff/unet.hpp"
