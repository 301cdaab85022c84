#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "idrt/embedder.hpp"
#include "idrt/tensor.hpp"

namespace idrt {

// identity parameter vector, deterministic in the seed
struct IdentitySpec {
  uint64_t seed = 0;
  std::vector<double> z;  // m entries in (-1,1)

  static IdentitySpec from_seed(uint64_t seed, long m = 16);
};

// face attributes: small camera/lighting jitter
struct Attr {
  double dx = 0.0, dy = 0.0, scale = 1.0, brightness = 0.0;

  static Attr from_seed(uint64_t seed);
  static Attr canonical() { return Attr{}; }
};

// Smooth synthetic face: Gaussian bumps whose amplitudes/colors are affine
// in z, composed with the attribute warp. Output [3,S,S] in [0,1],
// deterministic in (identity, attr).
Tensor render_face(const IdentitySpec& id, const Attr& attr, long image_size);
Tensor render_face(const IdentitySpec& id, uint64_t attr_seed, long image_size);

// One member F_k of the swap family.
struct SwapMethod {
  long index = 0;
  std::vector<double> color;      // 3x3 row-major channel mix M_k
  std::vector<double> residual;   // [3*S*S, m] row-major, full column rank
  double eps = 0.0;               // residual amplitude
  long image_size = 0, m = 0;
};

struct FamilyConfig {
  uint64_t seed = 7;
  long n = 4;
  long m = 16;
  long image_size = 32;
  std::vector<double> eps;        // empty -> {0.04,0.05,0.06,0.08} pattern
  double residual_gain = 0.12;    // Frobenius scale of the residual basis
  double color_strength = 0.08;   // M_k = I + strength * A_k
};

std::vector<double> default_eps(long n);

class SwapFamily {
 public:
  // verifies at construction: residual full column rank, cond(M_k) < 10,
  // methods pairwise distinct
  static SwapFamily create(const FamilyConfig& cfg);

  const FamilyConfig& config() const { return cfg_; }
  long n() const { return cfg_.n; }
  const SwapMethod& method(long k) const;

  // I^f = clamp(M_k * render(z_s, target_attr) + eps_k * R_k z_t).
  // source_attr is accepted for interface symmetry with F(I^s, I^t) but the
  // swap replaces the source's attributes wholesale with the target's.
  Tensor swap(const IdentitySpec& source, const Attr& source_attr,
              const IdentitySpec& target, const Attr& target_attr,
              long method) const;

  // least squares for z_t given the method and the unmixed source base
  // render; restricted to unclamped pixels. Throws on rank deficiency.
  std::vector<double> oracle_decode(const Tensor& fake, long method,
                                    const Tensor& base) const;

  struct IdentityEstimate {
    std::vector<double> z;
    Attr attr;
    double residual_norm = 0.0;
  };
  // Gauss-Newton fit of (z, attr) so that render_face matches the image;
  // used to re-swap from a retraced face.
  IdentityEstimate estimate_identity(const Tensor& image,
                                     long iterations = 15) const;

 private:
  FamilyConfig cfg_;
  std::vector<SwapMethod> methods_;
};

struct SampleRecord {
  std::string kind;      // "target-fake" | "source-source"
  long c = 0;            // method index (convention 0 for source-source)
  uint64_t target_seed = 0;
  uint64_t attr_seed = 0;
  std::string split;     // train | test-unseen | test-seen-TI | test-seen-SF
  std::string blob;      // relative path, stacked [2,3,S,S]: {input, target}
  bool label_noised = false;
};

struct CraftConfig {
  uint64_t seed = 7;
  long n = 4, m = 16, image_size = 32;
  std::vector<double> eps;          // empty -> default_eps(n)
  double residual_gain = 0.12;
  long train_pairs_per_method = 2000;
  long test_pairs_per_method = 400;
  long seen_pairs_per_method = 100;  // per seen split (TI and SF)
  long train_ids = 200;
  long test_ids = 50;
  long ss_train = 28, ss_test = 8;   // source-source pairs
  double label_noise = 0.0;          // fraction of train fakes with wrong c
  uint64_t embedder_seed = 9001;
  long tau_pairs = 1000;

  void validate() const;
};

struct DatasetManifest {
  long version = 1;
  CraftConfig config;
  uint64_t source_seed = 0;
  uint64_t family_seed = 0;
  double tau = 0.0;
  std::vector<double> eps;  // effective per-method amplitudes
  std::vector<SampleRecord> records;
  // split -> target identity seeds used in that split
  std::map<std::string, std::vector<uint64_t>> id_registry;
  double premise2_rate = 0.0;  // fraction passing without resampling
};

// writes out_dir/manifest.json + blobs/{split}/{index}.idrt
DatasetManifest craft_dataset(const CraftConfig& cfg, const std::string& out_dir);

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// reads the record's blob: returns {input [3,S,S], target [3,S,S]}
std::pair<Tensor, Tensor> load_pair(const std::string& dataset_dir,
                                    const SampleRecord& rec);

// family reconstructed from a manifest (same seeds -> same methods)
SwapFamily family_from_manifest(const DatasetManifest& m);

// embedder created and feature-centered on canonical synthetic renders; the
// one construction every component must share for a given seed
Embedder standard_embedder(uint64_t seed, long m, long image_size);

}  // namespace idrt
