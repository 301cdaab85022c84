#include "idrt/losses.hpp"

#include <stdexcept>

namespace idrt {

void LossConfig::validate() const {
  if (alpha < 0 || gamma < 0)
    throw std::invalid_argument("loss config: alpha and gamma must be >= 0");
  if (!(theta > 0.0 && theta <= 1.0))
    throw std::invalid_argument("loss config: theta must be in (0,1], got " +
                                std::to_string(theta));
  if (n < 2) throw std::invalid_argument("loss config: n must be >= 2");
}

namespace {
Tensor as_rows(const Tensor& omega) {
  if (omega.rank() == 1) {
    Tensor t({1, omega.dim(0)}, std::vector<double>(omega.data()));
    return t;
  }
  return omega;
}
}  // namespace

Tensor resolving_loss(const Tensor& omega_row, long c, const LossConfig& cfg,
                      bool is_source_source) {
  cfg.validate();
  Tensor rows = as_rows(omega_row);
  if (rows.dim(0) != 1)
    throw std::invalid_argument("resolving_loss: expected a single omega row");
  double theta = is_source_source ? 1.0 / static_cast<double>(cfg.n) : cfg.theta;
  long cc = is_source_source ? 0 : c;
  Tensor per = resolving_loss_rows(rows, {cc}, {theta}, kLogEpsFloor);
  return mean(per);
}

Tensor resolving_loss_mean(const Tensor& omega, const std::vector<long>& c,
                           const std::vector<char>& is_source_source,
                           const LossConfig& cfg) {
  cfg.validate();
  long batch = omega.dim(0);
  std::vector<long> cc(batch);
  std::vector<double> theta(batch);
  for (long b = 0; b < batch; ++b) {
    bool ss = is_source_source[b];
    cc[b] = ss ? 0 : c[b];
    theta[b] = ss ? 1.0 / static_cast<double>(cfg.n) : cfg.theta;
  }
  return mean(resolving_loss_rows(omega, cc, theta, kLogEpsFloor));
}

Tensor reconstruction_loss(const Tensor& retraced, const Tensor& target) {
  if (retraced.shape() != target.shape())
    throw std::invalid_argument("reconstruction_loss: shape mismatch " +
                                shape_str(retraced.shape()) + " vs " +
                                shape_str(target.shape()));
  Tensor per = sqrt_op(sum_per_sample(square(sub(retraced, target))));
  return mean(per);
}

Tensor identity_loss(const Tensor& v_r, const Tensor& v_t) {
  Tensor a = as_rows(v_r);
  Tensor b = as_rows(v_t);
  if (a.shape() != b.shape())
    throw std::invalid_argument("identity_loss: shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor na = l2_norm(a, 1);
  Tensor nb = l2_norm(b, 1);
  for (double v : na.data())
    if (v == 0.0) throw std::invalid_argument("identity_loss: zero-norm embedding");
  for (double v : nb.data())
    if (v == 0.0) throw std::invalid_argument("identity_loss: zero-norm embedding");
  Tensor dots = sum_per_sample(mul(a, b));
  Tensor cosine = mul(dots, reciprocal(mul(na, nb)));
  return mean(add_scalar(scalar_mul(cosine, -1.0), 1.0));
}

LossBreakdown total_loss(const Tensor& retraced, const Tensor& target,
                         const Tensor& v_r, const Tensor& v_t,
                         const Tensor& omega, const std::vector<long>& c,
                         const std::vector<char>& is_source_source,
                         const LossConfig& cfg) {
  LossBreakdown out;
  Tensor l_rec = reconstruction_loss(retraced, target);
  Tensor total = l_rec;
  out.rec = l_rec.item();
  if (cfg.alpha != 0.0) {
    Tensor l_id = identity_loss(v_r, v_t);
    out.id = l_id.item();
    total = add(total, scalar_mul(l_id, cfg.alpha));
  } else if (v_r.defined() && v_t.defined()) {
    NoGradGuard ng;
    out.id = identity_loss(v_r, v_t).item();
  }
  if (omega.defined() && cfg.gamma != 0.0) {
    Tensor l_res = resolving_loss_mean(omega, c, is_source_source, cfg);
    out.res = l_res.item();
    total = add(total, scalar_mul(l_res, cfg.gamma));
  }
  out.total = total;
  out.total_value = total.item();
  return out;
}

}  // namespace idrt
