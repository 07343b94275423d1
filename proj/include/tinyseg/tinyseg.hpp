#pragma once

// Umbrella header for the whole engine.

#include "tinyseg/architectures.hpp"
#include "tinyseg/batchnorm.hpp"
#include "tinyseg/checkpoint.hpp"
#include "tinyseg/conv.hpp"
#include "tinyseg/gradcheck.hpp"
#include "tinyseg/image_io.hpp"
#include "tinyseg/label_map.hpp"
#include "tinyseg/loss.hpp"
#include "tinyseg/manifest.hpp"
#include "tinyseg/metrics.hpp"
#include "tinyseg/ops.hpp"
#include "tinyseg/optim.hpp"
#include "tinyseg/params.hpp"
#include "tinyseg/pool.hpp"
#include "tinyseg/rng.hpp"
#include "tinyseg/synthetic.hpp"
#include "tinyseg/tape.hpp"
#include "tinyseg/tensor.hpp"
#include "tinyseg/train.hpp"
