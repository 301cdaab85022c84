#include "idrt/synthswap.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "idrt/blob.hpp"
#include "idrt/rng.hpp"

namespace idrt {

namespace {

constexpr long kBumps = 8;

// Fixed "world" constants of the face renderer: shared by every dataset and
// every family so that identity renders are universal.
struct FaceModel {
  long m = 0;
  std::vector<double> cx, cy, sigma;  // [kBumps]
  std::vector<double> amp0;           // [kBumps*3]
  std::vector<double> amp_w;          // [kBumps*3*m]
  std::vector<double> pos_w;          // [kBumps*2*m]
  std::vector<double> tint_w;         // [3*m]
};

const FaceModel& face_model(long m) {
  static std::mutex mu;
  static std::map<long, FaceModel> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(m);
  if (it != cache.end()) return it->second;
  FaceModel fm;
  fm.m = m;
  Rng rng(derive_seed(0x66616365ULL, 0x6d6f646cULL, static_cast<uint64_t>(m)));
  for (long j = 0; j < kBumps; ++j) {
    fm.cx.push_back(rng.uniform(0.22, 0.78));
    fm.cy.push_back(rng.uniform(0.22, 0.78));
    fm.sigma.push_back(rng.uniform(0.12, 0.22));
  }
  fm.amp0.resize(kBumps * 3);
  for (double& v : fm.amp0) v = rng.uniform(-0.05, 0.05);
  fm.amp_w.resize(kBumps * 3 * m);
  for (double& v : fm.amp_w) v = rng.normal() * 0.025;
  fm.pos_w.resize(kBumps * 2 * m);
  for (double& v : fm.pos_w) v = rng.normal() * 0.005;
  fm.tint_w.resize(3 * m);
  for (double& v : fm.tint_w) v = rng.normal() * 0.012;
  return cache.emplace(m, std::move(fm)).first->second;
}

double dot_z(const double* w, const std::vector<double>& z) {
  double s = 0.0;
  for (size_t i = 0; i < z.size(); ++i) s += w[i] * z[i];
  return s;
}

// in-place Cholesky solve of (A + jitter I) x = b for symmetric positive
// definite A of size d; throws when a pivot collapses
std::vector<double> chol_solve(std::vector<double> A, std::vector<double> b,
                               long d, double jitter) {
  double maxdiag = 0.0;
  for (long i = 0; i < d; ++i) maxdiag = std::max(maxdiag, std::abs(A[i * d + i]));
  for (long i = 0; i < d; ++i) A[i * d + i] += jitter;
  for (long i = 0; i < d; ++i) {
    for (long j = 0; j <= i; ++j) {
      double s = A[i * d + j];
      for (long k = 0; k < j; ++k) s -= A[i * d + k] * A[j * d + k];
      if (i == j) {
        if (s <= 1e-12 * std::max(maxdiag, 1.0))
          throw std::runtime_error("rank-deficient system in least squares");
        A[i * d + i] = std::sqrt(s);
      } else {
        A[i * d + j] = s / A[j * d + j];
      }
    }
  }
  for (long i = 0; i < d; ++i) {
    double s = b[i];
    for (long k = 0; k < i; ++k) s -= A[i * d + k] * b[k];
    b[i] = s / A[i * d + i];
  }
  for (long i = d - 1; i >= 0; --i) {
    double s = b[i];
    for (long k = i + 1; k < d; ++k) s -= A[k * d + i] * b[k];
    b[i] = s / A[i * d + i];
  }
  return b;
}

// eigenvalues of a symmetric 3x3 matrix (trigonometric closed form)
void sym3_eigenvalues(const double a[9], double out[3]) {
  double p1 = a[1] * a[1] + a[2] * a[2] + a[5] * a[5];
  double q = (a[0] + a[4] + a[8]) / 3.0;
  double p2 = (a[0] - q) * (a[0] - q) + (a[4] - q) * (a[4] - q) +
              (a[8] - q) * (a[8] - q) + 2.0 * p1;
  double p = std::sqrt(std::max(p2 / 6.0, 0.0));
  if (p < 1e-300) {
    out[0] = out[1] = out[2] = q;
    return;
  }
  double B[9];
  for (int i = 0; i < 9; ++i) B[i] = a[i] / p;
  B[0] -= q / p;
  B[4] -= q / p;
  B[8] -= q / p;
  double detB = B[0] * (B[4] * B[8] - B[5] * B[7]) -
                B[1] * (B[3] * B[8] - B[5] * B[6]) +
                B[2] * (B[3] * B[7] - B[4] * B[6]);
  double r = std::clamp(detB / 2.0, -1.0, 1.0);
  double phi = std::acos(r) / 3.0;
  out[0] = q + 2.0 * p * std::cos(phi);
  out[2] = q + 2.0 * p * std::cos(phi + 2.0943951023931953);  // +2pi/3
  out[1] = 3.0 * q - out[0] - out[2];
}

double condition_number_3x3(const std::vector<double>& M) {
  double mtm[9] = {0};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) mtm[i * 3 + j] += M[k * 3 + i] * M[k * 3 + j];
  double ev[3];
  sym3_eigenvalues(mtm, ev);
  double lo = std::min({ev[0], ev[1], ev[2]});
  double hi = std::max({ev[0], ev[1], ev[2]});
  if (lo <= 0.0) return 1e30;
  return std::sqrt(hi / lo);
}

}  // namespace

IdentitySpec IdentitySpec::from_seed(uint64_t seed, long m) {
  IdentitySpec id;
  id.seed = seed;
  Rng rng(derive_seed(seed, 0x69646e74ULL, 0));
  id.z.resize(m);
  for (double& v : id.z) v = rng.uniform(-1.0, 1.0);
  return id;
}

Attr Attr::from_seed(uint64_t seed) {
  Rng rng(derive_seed(seed, 0x61747472ULL, 0));
  Attr a;
  a.dx = rng.uniform(-0.06, 0.06);
  a.dy = rng.uniform(-0.06, 0.06);
  a.scale = rng.uniform(0.94, 1.06);
  a.brightness = rng.uniform(-0.05, 0.05);
  return a;
}

Tensor render_face(const IdentitySpec& id, const Attr& attr, long S) {
  const FaceModel& fm = face_model(static_cast<long>(id.z.size()));
  long m = fm.m;
  // identity-dependent bump parameters
  double bx[kBumps], by[kBumps], amp[kBumps][3], inv2s2[kBumps], tint[3];
  for (long j = 0; j < kBumps; ++j) {
    bx[j] = fm.cx[j] + dot_z(&fm.pos_w[(j * 2 + 0) * m], id.z);
    by[j] = fm.cy[j] + dot_z(&fm.pos_w[(j * 2 + 1) * m], id.z);
    inv2s2[j] = 1.0 / (2.0 * fm.sigma[j] * fm.sigma[j]);
    for (long c = 0; c < 3; ++c)
      amp[j][c] = fm.amp0[j * 3 + c] + dot_z(&fm.amp_w[(j * 3 + c) * m], id.z);
  }
  for (long c = 0; c < 3; ++c) tint[c] = dot_z(&fm.tint_w[c * m], id.z);

  Tensor out({3, S, S});
  std::vector<double>& px = out.mutable_data();
  for (long y = 0; y < S; ++y) {
    double v = (static_cast<double>(y) + 0.5) / static_cast<double>(S);
    double vw = (v - 0.5 - attr.dy) / attr.scale + 0.5;
    for (long x = 0; x < S; ++x) {
      double u = (static_cast<double>(x) + 0.5) / static_cast<double>(S);
      double uw = (u - 0.5 - attr.dx) / attr.scale + 0.5;
      double g[kBumps];
      for (long j = 0; j < kBumps; ++j) {
        double du = uw - bx[j], dv = vw - by[j];
        g[j] = std::exp(-(du * du + dv * dv) * inv2s2[j]);
      }
      for (long c = 0; c < 3; ++c) {
        double val = 0.5 + attr.brightness + tint[c];
        for (long j = 0; j < kBumps; ++j) val += amp[j][c] * g[j];
        px[(c * S + y) * S + x] = std::clamp(val, 0.0, 1.0);
      }
    }
  }
  return out;
}

Tensor render_face(const IdentitySpec& id, uint64_t attr_seed, long S) {
  return render_face(id, Attr::from_seed(attr_seed), S);
}

std::vector<double> default_eps(long n) {
  if (n == 4) return {0.04, 0.05, 0.06, 0.08};
  std::vector<double> e(n);
  for (long k = 0; k < n; ++k)
    e[k] = n == 1 ? 0.06 : 0.04 + 0.04 * static_cast<double>(k) / static_cast<double>(n - 1);
  return e;
}

SwapFamily SwapFamily::create(const FamilyConfig& cfg) {
  if (cfg.n < 1 || cfg.m < 1 || cfg.image_size < 8)
    throw std::invalid_argument("swap family: bad config sizes");
  SwapFamily fam;
  fam.cfg_ = cfg;
  if (fam.cfg_.eps.empty()) fam.cfg_.eps = default_eps(cfg.n);
  if (static_cast<long>(fam.cfg_.eps.size()) != cfg.n)
    throw std::invalid_argument("swap family: eps list must have n entries");
  long S = cfg.image_size, m = cfg.m;
  long rows = 3 * S * S;

  // Residual basis shared by all methods: the renderer's identity Jacobian
  // at z = 0 under canonical attributes, uniformly scaled.  The injected
  // term eps_k * R z_t is then a faint, geometry-aligned sketch of the
  // target's distinguishing features that a convolutional net can amplify
  // locally, while staying an exact linear code in z_t for oracle_decode.
  std::vector<std::vector<double>> jac(m, std::vector<double>(rows));
  {
    const double h = 1e-3;
    for (long j = 0; j < m; ++j) {
      std::vector<double> zp(m, 0.0), zm(m, 0.0);
      zp[j] = h;
      zm[j] = -h;
      Tensor rp = render_face(IdentitySpec{0, zp}, Attr::canonical(), S);
      Tensor rm = render_face(IdentitySpec{0, zm}, Attr::canonical(), S);
      for (long r = 0; r < rows; ++r)
        jac[j][r] = (rp.data()[r] - rm.data()[r]) / (2.0 * h);
    }
    // full-column-rank check on a Gram-Schmidt scratch copy; the stored
    // columns themselves stay un-orthogonalized so that R z_t keeps the
    // renderer's coordinate system (a uniform scalar is the only change)
    std::vector<std::vector<double>> gs = jac;
    for (long j = 0; j < m; ++j) {
      double pre = 0.0;
      for (double v : gs[j]) pre += v * v;
      pre = std::sqrt(pre);
      for (long i = 0; i < j; ++i) {
        double d = 0.0;
        for (long r = 0; r < rows; ++r) d += gs[j][r] * gs[i][r];
        for (long r = 0; r < rows; ++r) gs[j][r] -= d * gs[i][r];
      }
      double post = 0.0;
      for (double v : gs[j]) post += v * v;
      post = std::sqrt(post);
      if (post <= 1e-6 * std::max(pre, 1.0))
        throw std::runtime_error("swap family: residual basis rank-deficient");
      for (double& v : gs[j]) v /= post;
    }
    double fro = 0.0;
    for (const auto& col : jac)
      for (double v : col) fro += v * v;
    fro = std::sqrt(fro);
    double scale =
        cfg.residual_gain * std::sqrt(static_cast<double>(rows * m)) / fro;
    for (auto& col : jac)
      for (double& v : col) v *= scale;
  }

  for (long k = 0; k < cfg.n; ++k) {
    Rng rng(derive_seed(cfg.seed, 0x6d657468ULL, static_cast<uint64_t>(k)));
    SwapMethod meth;
    meth.index = k;
    meth.eps = fam.cfg_.eps[k];
    meth.image_size = S;
    meth.m = m;
    // well-conditioned channel mix
    for (int attempt = 0;; ++attempt) {
      meth.color.assign(9, 0.0);
      for (int i = 0; i < 3; ++i) meth.color[i * 3 + i] = 1.0;
      for (int i = 0; i < 9; ++i)
        meth.color[i] += cfg.color_strength * rng.uniform(-1.0, 1.0);
      if (condition_number_3x3(meth.color) < 10.0) break;
      if (attempt > 100)
        throw std::runtime_error("swap family: could not draw a well-conditioned color mix");
    }
    // the first quarter of the identity coordinates enters every method
    // with the same polarity (decodable without knowing the method); the
    // rest alternates sign across methods, so only a method-aware decoder
    // can amplify it coherently — a method-agnostic one sees it cancel
    meth.residual.assign(rows * m, 0.0);
    for (long j = 0; j < m; ++j) {
      double sign = (j < m / 4 || k % 2 == 0) ? 1.0 : -1.0;
      for (long r = 0; r < rows; ++r) meth.residual[r * m + j] = sign * jac[j][r];
    }
    fam.methods_.push_back(std::move(meth));
  }
  for (long a = 0; a < cfg.n; ++a)
    for (long b = a + 1; b < cfg.n; ++b) {
      double d = 0.0;
      for (int i = 0; i < 9; ++i)
        d = std::max(d, std::abs(fam.methods_[a].color[i] - fam.methods_[b].color[i]));
      if (d < 1e-9)
        throw std::runtime_error("swap family: two methods are indistinguishable");
    }
  return fam;
}

const SwapMethod& SwapFamily::method(long k) const {
  if (k < 0 || k >= static_cast<long>(methods_.size()))
    throw std::invalid_argument("swap family: method index out of range");
  return methods_[k];
}

Tensor SwapFamily::swap(const IdentitySpec& source, const Attr& /*source_attr*/,
                        const IdentitySpec& target, const Attr& target_attr,
                        long k) const {
  const SwapMethod& meth = method(k);
  long S = cfg_.image_size, m = cfg_.m;
  if (static_cast<long>(source.z.size()) != m ||
      static_cast<long>(target.z.size()) != m)
    throw std::invalid_argument("swap: identity dimension mismatch");
  Tensor base = render_face(source, target_attr, S);
  const std::vector<double>& b = base.data();
  Tensor out({3, S, S});
  std::vector<double>& o = out.mutable_data();
  long SS = S * S;
  for (long p = 0; p < SS; ++p)
    for (long c = 0; c < 3; ++c) {
      double v = meth.color[c * 3 + 0] * b[0 * SS + p] +
                 meth.color[c * 3 + 1] * b[1 * SS + p] +
                 meth.color[c * 3 + 2] * b[2 * SS + p];
      const double* row = &meth.residual[(c * SS + p) * m];
      v += meth.eps * dot_z(row, target.z);
      o[c * SS + p] = std::clamp(v, 0.0, 1.0);
    }
  return out;
}

std::vector<double> SwapFamily::oracle_decode(const Tensor& fake, long k,
                                              const Tensor& base) const {
  const SwapMethod& meth = method(k);
  long S = cfg_.image_size, m = cfg_.m, SS = S * S;
  if (fake.numel() != 3 * SS || base.numel() != 3 * SS)
    throw std::invalid_argument("oracle_decode: image shape mismatch");
  const std::vector<double>& f = fake.data();
  const std::vector<double>& b = base.data();
  std::vector<double> AtA(m * m, 0.0), Atb(m, 0.0);
  long used = 0;
  for (long p = 0; p < SS; ++p)
    for (long c = 0; c < 3; ++c) {
      double v = f[c * SS + p];
      if (v <= 0.0 || v >= 1.0) continue;  // clamped pixels carry no signal
      double mixed = meth.color[c * 3 + 0] * b[0 * SS + p] +
                     meth.color[c * 3 + 1] * b[1 * SS + p] +
                     meth.color[c * 3 + 2] * b[2 * SS + p];
      double r = v - mixed;
      const double* row = &meth.residual[(c * SS + p) * m];
      for (long i = 0; i < m; ++i) {
        double ai = meth.eps * row[i];
        Atb[i] += ai * r;
        for (long j = 0; j <= i; ++j) AtA[i * m + j] += ai * meth.eps * row[j];
      }
      ++used;
    }
  if (used < m)
    throw std::runtime_error("oracle_decode: too few unclamped pixels");
  for (long i = 0; i < m; ++i)
    for (long j = i + 1; j < m; ++j) AtA[i * m + j] = AtA[j * m + i];
  return chol_solve(std::move(AtA), std::move(Atb), m, 0.0);
}

SwapFamily::IdentityEstimate SwapFamily::estimate_identity(
    const Tensor& image, long iterations) const {
  long S = cfg_.image_size, m = cfg_.m;
  if (image.numel() != 3 * S * S)
    throw std::invalid_argument("estimate_identity: image shape mismatch");
  long d = m + 4;  // z, dx, dy, scale, brightness
  std::vector<double> p(d, 0.0);
  p[m + 2] = 1.0;  // scale
  auto residual = [&](const std::vector<double>& q) {
    IdentitySpec id;
    id.z.assign(q.begin(), q.begin() + m);
    Attr a{q[m], q[m + 1], q[m + 2], q[m + 3]};
    Tensor r = render_face(id, a, S);
    std::vector<double> out(r.data());
    for (size_t i = 0; i < out.size(); ++i) out[i] -= image.data()[i];
    return out;
  };
  double norm = 0.0;
  for (long it = 0; it < iterations; ++it) {
    std::vector<double> r0 = residual(p);
    long rows = static_cast<long>(r0.size());
    std::vector<double> J(rows * d);
    const double h = 1e-4;
    for (long j = 0; j < d; ++j) {
      std::vector<double> pp = p, pm = p;
      pp[j] += h;
      pm[j] -= h;
      std::vector<double> rp = residual(pp), rm = residual(pm);
      for (long r = 0; r < rows; ++r) J[r * d + j] = (rp[r] - rm[r]) / (2.0 * h);
    }
    std::vector<double> JtJ(d * d, 0.0), Jtr(d, 0.0);
    for (long r = 0; r < rows; ++r) {
      const double* jr = &J[r * d];
      for (long i = 0; i < d; ++i) {
        Jtr[i] += jr[i] * r0[r];
        for (long j = 0; j <= i; ++j) JtJ[i * d + j] += jr[i] * jr[j];
      }
    }
    for (long i = 0; i < d; ++i)
      for (long j = i + 1; j < d; ++j) JtJ[i * d + j] = JtJ[j * d + i];
    std::vector<double> step = chol_solve(std::move(JtJ), Jtr, d, 1e-8);
    for (long j = 0; j < d; ++j) p[j] -= step[j];
    for (long j = 0; j < m; ++j) p[j] = std::clamp(p[j], -1.5, 1.5);
    p[m] = std::clamp(p[m], -0.2, 0.2);
    p[m + 1] = std::clamp(p[m + 1], -0.2, 0.2);
    p[m + 2] = std::clamp(p[m + 2], 0.8, 1.25);
    p[m + 3] = std::clamp(p[m + 3], -0.2, 0.2);
    norm = 0.0;
    for (double v : residual(p)) norm += v * v;
    norm = std::sqrt(norm);
  }
  IdentityEstimate est;
  est.z.assign(p.begin(), p.begin() + m);
  est.attr = Attr{p[m], p[m + 1], p[m + 2], p[m + 3]};
  est.residual_norm = norm;
  return est;
}

void CraftConfig::validate() const {
  if (n < 2) throw std::invalid_argument("craft: n must be >= 2");
  if (m < 1 || image_size < 8 || image_size % 8 != 0)
    throw std::invalid_argument("craft: image size must be a positive multiple of 8");
  if (!eps.empty() && static_cast<long>(eps.size()) != n)
    throw std::invalid_argument("craft: eps override must have n entries");
  if (train_pairs_per_method < 1 || test_pairs_per_method < 1 ||
      train_ids < 2 || test_ids < 2 || ss_train < 0 || ss_test < 0 ||
      seen_pairs_per_method < 0)
    throw std::invalid_argument("craft: inconsistent sizes");
  if (label_noise < 0.0 || label_noise > 1.0)
    throw std::invalid_argument("craft: label_noise must be in [0,1]");
  if (tau_pairs < 2) throw std::invalid_argument("craft: tau_pairs must be >= 2");
}

namespace {

using nlohmann::json;

json config_to_json(const CraftConfig& c) {
  return json{{"seed", c.seed},
              {"n", c.n},
              {"m", c.m},
              {"image_size", c.image_size},
              {"eps", c.eps},
              {"residual_gain", c.residual_gain},
              {"train_pairs_per_method", c.train_pairs_per_method},
              {"test_pairs_per_method", c.test_pairs_per_method},
              {"seen_pairs_per_method", c.seen_pairs_per_method},
              {"train_ids", c.train_ids},
              {"test_ids", c.test_ids},
              {"ss_train", c.ss_train},
              {"ss_test", c.ss_test},
              {"label_noise", c.label_noise},
              {"embedder_seed", c.embedder_seed},
              {"tau_pairs", c.tau_pairs}};
}

CraftConfig config_from_json(const json& j) {
  CraftConfig c;
  c.seed = j.at("seed").get<uint64_t>();
  c.n = j.at("n").get<long>();
  c.m = j.at("m").get<long>();
  c.image_size = j.at("image_size").get<long>();
  c.eps = j.at("eps").get<std::vector<double>>();
  c.residual_gain = j.at("residual_gain").get<double>();
  c.train_pairs_per_method = j.at("train_pairs_per_method").get<long>();
  c.test_pairs_per_method = j.at("test_pairs_per_method").get<long>();
  c.seen_pairs_per_method = j.at("seen_pairs_per_method").get<long>();
  c.train_ids = j.at("train_ids").get<long>();
  c.test_ids = j.at("test_ids").get<long>();
  c.ss_train = j.at("ss_train").get<long>();
  c.ss_test = j.at("ss_test").get<long>();
  c.label_noise = j.at("label_noise").get<double>();
  c.embedder_seed = j.at("embedder_seed").get<uint64_t>();
  c.tau_pairs = j.at("tau_pairs").get<long>();
  return c;
}

}  // namespace

void save_manifest(const DatasetManifest& m, const std::string& path) {
  json j;
  j["version"] = m.version;
  j["config"] = config_to_json(m.config);
  j["source_seed"] = m.source_seed;
  j["family_seed"] = m.family_seed;
  j["tau"] = m.tau;
  j["eps"] = m.eps;
  j["premise2_rate"] = m.premise2_rate;
  j["id_registry"] = m.id_registry;
  json recs = json::array();
  for (const auto& r : m.records)
    recs.push_back(json{{"kind", r.kind},
                        {"c", r.c},
                        {"target_seed", r.target_seed},
                        {"attr_seed", r.attr_seed},
                        {"split", r.split},
                        {"blob", r.blob},
                        {"label_noised", r.label_noised}});
  j["records"] = std::move(recs);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write manifest: " + path);
  os << j.dump(1) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read manifest: " + path);
  json j;
  is >> j;
  DatasetManifest m;
  m.version = j.at("version").get<long>();
  if (m.version != 1)
    throw std::runtime_error("manifest schema version mismatch: " +
                             std::to_string(m.version));
  m.config = config_from_json(j.at("config"));
  m.source_seed = j.at("source_seed").get<uint64_t>();
  m.family_seed = j.at("family_seed").get<uint64_t>();
  m.tau = j.at("tau").get<double>();
  m.eps = j.at("eps").get<std::vector<double>>();
  m.premise2_rate = j.at("premise2_rate").get<double>();
  m.id_registry =
      j.at("id_registry").get<std::map<std::string, std::vector<uint64_t>>>();
  for (const auto& rj : j.at("records")) {
    SampleRecord r;
    r.kind = rj.at("kind").get<std::string>();
    r.c = rj.at("c").get<long>();
    r.target_seed = rj.at("target_seed").get<uint64_t>();
    r.attr_seed = rj.at("attr_seed").get<uint64_t>();
    r.split = rj.at("split").get<std::string>();
    r.blob = rj.at("blob").get<std::string>();
    r.label_noised = rj.at("label_noised").get<bool>();
    m.records.push_back(std::move(r));
  }
  return m;
}

SwapFamily family_from_manifest(const DatasetManifest& m) {
  FamilyConfig fc;
  fc.seed = m.family_seed;
  fc.n = m.config.n;
  fc.m = m.config.m;
  fc.image_size = m.config.image_size;
  fc.eps = m.eps;
  fc.residual_gain = m.config.residual_gain;
  return SwapFamily::create(fc);
}

Embedder standard_embedder(uint64_t seed, long m, long image_size) {
  Embedder emb = Embedder::create(seed, 32, 3, image_size);
  emb.center_on(
      [m, image_size](uint64_t id_seed, uint64_t attr_seed) {
        Tensor img = render_face(IdentitySpec::from_seed(id_seed, m), attr_seed,
                                 image_size);
        return Tensor({1, 3, image_size, image_size},
                      std::vector<double>(img.data()));
      },
      64);
  return emb;
}

std::pair<Tensor, Tensor> load_pair(const std::string& dataset_dir,
                                    const SampleRecord& rec) {
  Blob b = load_blob(dataset_dir + "/" + rec.blob);
  if (b.shape.size() != 4 || b.shape[0] != 2)
    throw std::runtime_error("dataset blob has unexpected shape: " + rec.blob);
  Shape img{b.shape[1], b.shape[2], b.shape[3]};
  long sz = shape_numel(img);
  Tensor input(img, std::vector<double>(b.data.begin(), b.data.begin() + sz));
  Tensor target(img, std::vector<double>(b.data.begin() + sz, b.data.end()));
  return {input, target};
}

DatasetManifest craft_dataset(const CraftConfig& cfg,
                              const std::string& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;

  DatasetManifest man;
  man.config = cfg;
  man.config.eps = cfg.eps.empty() ? default_eps(cfg.n) : cfg.eps;
  man.eps = man.config.eps;
  man.family_seed = derive_seed(cfg.seed, 0x666d6c79ULL);

  FamilyConfig fc;
  fc.seed = man.family_seed;
  fc.n = cfg.n;
  fc.m = cfg.m;
  fc.image_size = cfg.image_size;
  fc.eps = man.eps;
  fc.residual_gain = cfg.residual_gain;
  SwapFamily fam = SwapFamily::create(fc);

  Embedder emb = standard_embedder(cfg.embedder_seed, cfg.m, cfg.image_size);
  auto render_cb = [&](uint64_t id_seed, uint64_t attr_seed) {
    Tensor img = render_face(IdentitySpec::from_seed(id_seed, cfg.m), attr_seed,
                             cfg.image_size);
    return Tensor({1, 3, cfg.image_size, cfg.image_size},
                  std::vector<double>(img.data()));
  };
  man.tau = calibrate_tau(emb, render_cb, cfg.tau_pairs,
                          derive_seed(cfg.seed, 0x74617563ULL))
                .tau;

  auto embed_img = [&](const Tensor& img) {
    NoGradGuard ng;
    return emb.embed(Tensor({1, 3, cfg.image_size, cfg.image_size},
                            std::vector<double>(img.data())));
  };

  // Some subjects are intrinsically fragile as swap sources: modest attribute
  // jitter or a method's colour transform already pushes their embedding
  // below tau, so no amount of per-sample resampling keeps the premise-2
  // violation rate under 1%.  Probe candidate subjects deterministically and
  // keep the first whose fakes stay above tau with margin across the probe
  // sweep; the chosen seed is recorded in the manifest.
  IdentitySpec source;
  Tensor src_canon;
  Tensor v_src;
  {
    const long kProbes = 128;
    const long kCandidates = 64;
    const double kMargin = 0.02;
    const double kEarlyAccept = 0.05;  // clearly safe, stop scanning
    double best_min = -2.0;
    for (uint64_t cand = 0; cand < kCandidates; ++cand) {
      uint64_t seed = derive_seed(cfg.seed, 0x73726373ULL, cand);
      IdentitySpec s = IdentitySpec::from_seed(seed, cfg.m);
      Tensor canon = render_face(s, Attr::canonical(), cfg.image_size);
      Tensor v = embed_img(canon);
      double min_sim = 1.0;
      for (long p = 0; p < kProbes && min_sim > best_min; ++p) {
        IdentitySpec tgt = IdentitySpec::from_seed(
            derive_seed(cfg.seed, 0x70726269ULL, static_cast<uint64_t>(p)),
            cfg.m);
        Attr attr = Attr::from_seed(
            derive_seed(cfg.seed, 0x70726261ULL, static_cast<uint64_t>(p)));
        Tensor fake = fam.swap(s, Attr::canonical(), tgt, attr, p % cfg.n);
        Tensor vf = embed_img(fake);
        double d = 0.0;
        for (long i = 0; i < vf.numel(); ++i) d += vf.data()[i] * v.data()[i];
        min_sim = std::min(min_sim, d);
      }
      if (min_sim > best_min) {
        best_min = min_sim;
        man.source_seed = seed;
        source = std::move(s);
        src_canon = std::move(canon);
        v_src = std::move(v);
      }
      if (best_min > man.tau + kEarlyAccept) break;
    }
    if (best_min <= man.tau + kMargin)
      throw std::runtime_error(
          "craft: no feasible source subject among 64 candidates (tau=" +
          std::to_string(man.tau) + ")");
  }
  auto src_similarity = [&](const Tensor& img) {
    Tensor v = embed_img(img);
    double d = 0.0;
    for (long i = 0; i < v.numel(); ++i) d += v.data()[i] * v_src.data()[i];
    return d;
  };

  // disjoint identity pools via distinct seed streams
  std::vector<uint64_t> train_pool(cfg.train_ids), unseen_pool(cfg.test_ids);
  for (long i = 0; i < cfg.train_ids; ++i)
    train_pool[i] = derive_seed(cfg.seed, 0x74696473ULL, static_cast<uint64_t>(i));
  for (long i = 0; i < cfg.test_ids; ++i)
    unseen_pool[i] = derive_seed(cfg.seed, 0x75696473ULL, static_cast<uint64_t>(i));
  {
    std::set<uint64_t> all(train_pool.begin(), train_pool.end());
    for (uint64_t s : unseen_pool)
      if (!all.insert(s).second)
        throw std::runtime_error("craft: identity seed collision across pools");
  }

  fs::create_directories(fs::path(out_dir) / "blobs");
  for (const char* split : {"train", "test-unseen", "test-seen-TI", "test-seen-SF"})
    fs::create_directories(fs::path(out_dir) / "blobs" / split);

  Rng pick(derive_seed(cfg.seed, 0x7069636bULL));
  Rng noise_rng(derive_seed(cfg.seed, 0x6e6f6973ULL));
  uint64_t train_attr_ctr = 0, test_attr_ctr = 0, ss_attr_ctr = 0;
  auto next_train_attr = [&] {
    return derive_seed(cfg.seed, 0x74617474ULL, train_attr_ctr++);
  };
  auto next_test_attr = [&] {
    return derive_seed(cfg.seed, 0x75617474ULL, test_attr_ctr++);
  };
  std::vector<uint64_t> train_attrs_used;
  std::map<std::string, long> split_counter;
  std::map<std::string, std::set<uint64_t>> reg;
  long attempts = 0, violations = 0;

  auto write_record = [&](const std::string& split, SampleRecord rec,
                          const Tensor& input, const Tensor& target) {
    long idx = split_counter[split]++;
    rec.split = split;
    rec.blob = "blobs/" + split + "/" + std::to_string(idx) + ".idrt";
    Blob b;
    b.shape = {2, 3, cfg.image_size, cfg.image_size};
    b.data = input.data();
    b.data.insert(b.data.end(), target.data().begin(), target.data().end());
    save_blob(out_dir + "/" + rec.blob, b);
    man.records.push_back(std::move(rec));
  };

  auto make_fake = [&](const std::string& split, long k, uint64_t target_seed,
                       auto&& attr_supplier, bool record_train_attr) {
    IdentitySpec target = IdentitySpec::from_seed(target_seed, cfg.m);
    for (int retry = 0;; ++retry) {
      uint64_t attr_seed = attr_supplier();
      Attr attr = Attr::from_seed(attr_seed);
      Tensor fake = fam.swap(source, Attr::canonical(), target, attr, k);
      ++attempts;
      if (src_similarity(fake) > man.tau) {
        if (record_train_attr) train_attrs_used.push_back(attr_seed);
        SampleRecord rec;
        rec.kind = "target-fake";
        rec.c = k;
        if (split == "train" && cfg.label_noise > 0.0 &&
            noise_rng.uniform() < cfg.label_noise) {
          rec.c = static_cast<long>((k + 1 + noise_rng.below(cfg.n - 1)) % cfg.n);
          rec.label_noised = true;
        }
        rec.target_seed = target_seed;
        rec.attr_seed = attr_seed;
        Tensor tgt = render_face(target, attr, cfg.image_size);
        write_record(split, std::move(rec), fake, tgt);
        reg[split].insert(target_seed);
        return;
      }
      ++violations;
      if (retry >= 20)
        throw std::runtime_error(
            "craft: premise-2 violation persists after resampling (method " +
            std::to_string(k) + ", target seed " + std::to_string(target_seed) +
            ", similarity threshold " + std::to_string(man.tau) + ")");
    }
  };

  for (long k = 0; k < cfg.n; ++k)
    for (long i = 0; i < cfg.train_pairs_per_method; ++i)
      make_fake("train", k, train_pool[pick.below(cfg.train_ids)],
                next_train_attr, true);
  // first sweep the whole unseen pool (counting across methods) so every
  // identity appears in the retrieval gallery, then sample freely
  long unseen_ctr = 0;
  for (long k = 0; k < cfg.n; ++k)
    for (long i = 0; i < cfg.test_pairs_per_method; ++i) {
      long u = unseen_ctr < cfg.test_ids
                   ? unseen_ctr
                   : static_cast<long>(pick.below(cfg.test_ids));
      ++unseen_ctr;
      make_fake("test-unseen", k, unseen_pool[u], next_test_attr, false);
    }
  // seen-TI must reuse identities the model actually saw during training,
  // not merely identities from the train pool
  std::vector<uint64_t> seen_pool(reg["train"].begin(), reg["train"].end());
  for (long k = 0; k < cfg.n; ++k)
    for (long i = 0; i < cfg.seen_pairs_per_method; ++i)
      make_fake("test-seen-TI", k, seen_pool[pick.below(seen_pool.size())],
                next_test_attr, false);
  for (long k = 0; k < cfg.n; ++k)
    for (long i = 0; i < cfg.seen_pairs_per_method; ++i)
      make_fake("test-seen-SF", k, unseen_pool[pick.below(cfg.test_ids)],
                [&] { return train_attrs_used[pick.below(train_attrs_used.size())]; },
                false);

  auto make_ss = [&](const std::string& split) {
    uint64_t attr_seed = derive_seed(cfg.seed, 0x73617474ULL, ss_attr_ctr++);
    Tensor img = render_face(source, attr_seed, cfg.image_size);
    SampleRecord rec;
    rec.kind = "source-source";
    rec.c = 0;
    rec.target_seed = man.source_seed;
    rec.attr_seed = attr_seed;
    write_record(split, std::move(rec), img, img);
  };
  for (long i = 0; i < cfg.ss_train; ++i) make_ss("train");
  for (long i = 0; i < cfg.ss_test; ++i) make_ss("test-unseen");

  double rate = attempts == 0
                    ? 1.0
                    : 1.0 - static_cast<double>(violations) / static_cast<double>(attempts);
  man.premise2_rate = rate;
  if (rate < 0.99)
    throw std::runtime_error("craft: premise-2 violation rate " +
                             std::to_string(1.0 - rate) +
                             " exceeds 1% (tau=" + std::to_string(man.tau) + ")");

  for (auto& [split, seeds] : reg)
    man.id_registry[split] = std::vector<uint64_t>(seeds.begin(), seeds.end());
  {
    std::set<uint64_t> tr(man.id_registry["train"].begin(),
                          man.id_registry["train"].end());
    for (uint64_t s : man.id_registry["test-unseen"])
      if (tr.count(s))
        throw std::runtime_error("craft: train/test-unseen identity overlap");
  }

  save_manifest(man, out_dir + "/manifest.json");
  return man;
}

}  // namespace idrt
