#include "idrt/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

#include "idrt/rng.hpp"

namespace idrt {

GradCheckReport gradcheck(const std::string& name,
                          const std::function<Tensor()>& forward,
                          const std::vector<Tensor>& leaves, long max_entries,
                          double step, unsigned long seed) {
  // analytic pass
  for (const Tensor& t : leaves) {
    if (!t.requires_grad())
      throw std::invalid_argument("gradcheck: leaf without requires_grad");
    const_cast<Tensor&>(t).zero_grad();
  }
  Tensor loss = forward();
  backward(loss);

  struct Entry {
    size_t leaf;
    size_t idx;
  };
  std::vector<Entry> all;
  for (size_t li = 0; li < leaves.size(); ++li)
    for (size_t i = 0; i < leaves[li].data().size(); ++i) all.push_back({li, i});
  Rng rng(derive_seed(seed, 0x67726463ULL));
  rng.shuffle(all);
  if (static_cast<long>(all.size()) > max_entries) all.resize(max_entries);

  GradCheckReport rep;
  rep.name = name;
  rep.checked = static_cast<long>(all.size());
  for (const Entry& e : all) {
    Tensor leaf = leaves[e.leaf];
    double analytic = leaf.grad()[e.idx];
    double orig = leaf.node->value[e.idx];
    double lp, lm;
    {
      NoGradGuard ng;
      leaf.node->value[e.idx] = orig + step;
      lp = forward().item();
      leaf.node->value[e.idx] = orig - step;
      lm = forward().item();
      leaf.node->value[e.idx] = orig;
    }
    double fd = (lp - lm) / (2.0 * step);
    double denom = std::max(std::max(std::abs(analytic), std::abs(fd)), 1e-6);
    double rel = std::abs(analytic - fd) / denom;
    if (std::abs(analytic) < 1e-10 && std::abs(fd) < 1e-10) rel = 0.0;
    rep.max_rel_err = std::max(rep.max_rel_err, rel);
  }
  return rep;
}

}  // namespace idrt
