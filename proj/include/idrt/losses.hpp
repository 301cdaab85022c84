#pragma once

#include <vector>

#include "idrt/ops.hpp"

namespace idrt {

struct LossConfig {
  double alpha = 0.01;  // weight of the identity term
  double gamma = 10.0;  // weight of the resolving term
  double theta = 0.9;   // fusion-regularization value
  long n = 4;           // method count

  void validate() const;
};

constexpr double kLogEpsFloor = 1e-12;

// L = -[theta log w_c + (1-theta)/(n-1) sum_{i!=c} log w_i]; for
// source-source samples theta is replaced by 1/n (c is then immaterial and
// fixed to 0 by convention).
Tensor resolving_loss(const Tensor& omega_row, long c, const LossConfig& cfg,
                      bool is_source_source);

// batch mean of the above with per-sample c / source-source flags
Tensor resolving_loss_mean(const Tensor& omega, const std::vector<long>& c,
                           const std::vector<char>& is_source_source,
                           const LossConfig& cfg);

// per-sample Euclidean norm of the flattened difference, averaged over batch
Tensor reconstruction_loss(const Tensor& retraced, const Tensor& target);

// mean over batch of 1 - cosine(v_r, v_t); rows must have nonzero norm
Tensor identity_loss(const Tensor& v_r, const Tensor& v_t);

struct LossBreakdown {
  Tensor total;
  double rec = 0.0, id = 0.0, res = 0.0, total_value = 0.0;
};

// L_total = L_rec + alpha*L_id + gamma*L_res. Pass an undefined omega to
// drop the resolving term (vanilla-UNet baselines).
LossBreakdown total_loss(const Tensor& retraced, const Tensor& target,
                         const Tensor& v_r, const Tensor& v_t,
                         const Tensor& omega, const std::vector<long>& c,
                         const std::vector<char>& is_source_source,
                         const LossConfig& cfg);

}  // namespace idrt
