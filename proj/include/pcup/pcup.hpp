// Umbrella header for the point cloud upsampling library.
#pragma once

#include "pcup/ablation.hpp"
#include "pcup/config.hpp"
#include "pcup/core.hpp"
#include "pcup/distance_field.hpp"
#include "pcup/fixtures.hpp"
#include "pcup/io.hpp"
#include "pcup/metrics.hpp"
#include "pcup/p2pnet.hpp"
#include "pcup/pipeline.hpp"
#include "pcup/refinement.hpp"
#include "pcup/sampling.hpp"
#include "pcup/spatial_index.hpp"
#include "pcup/tensor.hpp"
#include "pcup/training.hpp"
