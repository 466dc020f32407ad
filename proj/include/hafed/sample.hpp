#pragma once

#include <optional>
#include <vector>

#include "hafed/matrix.hpp"

namespace hafed {

// One unimodal sequence: T x d_m features plus a scalar target.
struct SeqSample {
  Matrix x;
  int modality = 0;
  double label = 0.0;
};

// One multimodal tuple sharing a label; a view may be missing (masked or
// never recorded). At least one view must be present.
struct AlignedSample {
  std::vector<std::optional<Matrix>> views;  // size M
  double label = 0.0;

  std::size_t present_count() const {
    std::size_t n = 0;
    for (const auto& v : views)
      if (v.has_value()) ++n;
    return n;
  }
};

}  // namespace hafed
