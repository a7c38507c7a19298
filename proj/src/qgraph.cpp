// Copyright (c) 2026 sepquant contributors
// SPDX-License-Identifier: Apache-2.0
#include "sepquant/qgraph.hpp"

namespace sepquant {

const char* qlayer_kind_name(const QLayerSpec& layer) {
  switch (layer.index()) {
    case 0: return "conv2d";
    case 1: return "depthwise_conv2d";
    case 2: return "activation";
    case 3: return "global_avg_pool";
    case 4: return "dense";
    case 5: return "softmax";
    default: return "unknown";
  }
}

}  // namespace sepquant
