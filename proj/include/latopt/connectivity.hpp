#pragma once

// 4-connected component labeling on thresholded density fields.

#include <vector>

#include "latopt/field.hpp"

namespace latopt {

// Labels cells with value >= threshold. Background stays 0; components are
// numbered 1..count in scan order (memory order, bottom row first). Returns
// the component count. Iterative frontier expansion, so deep grids cannot
// overflow the stack.
inline int label_components(const Field2D& x, double threshold,
                            std::vector<int>& labels) {
  const int w = x.w, h = x.h;
  labels.assign(static_cast<std::size_t>(w) * h, 0);
  int count = 0;
  std::vector<int> stack;
  for (int start = 0; start < w * h; ++start) {
    if (labels[start] != 0 || x.v[start] < threshold) continue;
    ++count;
    labels[start] = count;
    stack.assign(1, start);
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      const int ix = i % w, iy = i / w;
      const int nbr[4] = {ix > 0 ? i - 1 : -1, ix < w - 1 ? i + 1 : -1,
                          iy > 0 ? i - w : -1, iy < h - 1 ? i + w : -1};
      for (int j : nbr) {
        if (j >= 0 && labels[j] == 0 && x.v[j] >= threshold) {
          labels[j] = count;
          stack.push_back(j);
        }
      }
    }
  }
  return count;
}

}  // namespace latopt
