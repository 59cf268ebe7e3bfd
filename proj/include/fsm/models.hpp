#pragma once

#include <cstdint>

#include "fsm/graph.hpp"

namespace fsm {

/// 8-layer VGG-style classifier for 3x32x32 inputs:
/// conv16 conv16 pool conv32 conv32 pool conv64 conv64 pool fc128 fc10.
/// Every conv is 3x3 pad 1 and heads a conv/bn/relu unit.
ModelGraph vgg8(uint64_t seed, int num_classes = 10);

/// Small 3-unit net for fast tests: conv8 pool conv16 pool conv16 pool fc10,
/// same input format as vgg8.
ModelGraph tinynet(uint64_t seed, int num_classes = 10);

/// Fresh He-style random init for an existing architecture, in place.
void reinit(ModelGraph& g, uint64_t seed);

}  // namespace fsm
