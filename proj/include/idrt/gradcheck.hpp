#pragma once

#include <functional>
#include <string>
#include <vector>

#include "idrt/tensor.hpp"

namespace idrt {

struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  long checked = 0;
};

// Central finite-difference check of reverse-mode gradients.
//
// `forward` must rebuild the loss graph from the current leaf values on every
// call (define-by-run). Up to `max_entries` parameter entries are sampled
// across all leaves with the given seed; step is the FD half-width.
GradCheckReport gradcheck(const std::string& name,
                          const std::function<Tensor()>& forward,
                          const std::vector<Tensor>& leaves,
                          long max_entries = 200, double step = 1e-5,
                          unsigned long seed = 0);

}  // namespace idrt
