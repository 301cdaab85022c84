#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "idrt/synthswap.hpp"
#include "idrt/trainer.hpp"

namespace idrt {

// retraced batch from an input batch; the fake baseline is the identity
// function and tests may use a perfect stub returning the true targets
using RetraceFn = std::function<Tensor(const Tensor&)>;
// omega rows from an input batch (resolver access for entropy reporting)
using ResolveFn = std::function<Tensor(const Tensor&)>;

RetraceFn model_retrace_fn(const Model& model);
RetraceFn fake_baseline_fn();

struct EvalConfig {
  long gallery_size = 50;
  long mc_trials = 10000;
  long hist_bins = 40;
  long semantic_samples_per_method = 25;
  long max_pairs_per_method = 0;  // 0 = all
  uint64_t embedder_seed_a = 9001, embedder_seed_b = 9002;
  uint64_t seed = 1;
  std::string split = "test-unseen";
};

struct SimilaritySummary {
  double mean = 0.0, stddev = 0.0;
  long count = 0;
};

struct IdSimilarity {
  // index-aligned per evaluated pair
  std::vector<double> sims_a, sims_b;
  std::vector<long> method;
  SimilaritySummary overall_a, overall_b;
  std::map<long, SimilaritySummary> per_method_a, per_method_b;
};

struct Retrieval {
  double t1 = 0.0, t5 = 0.0;  // percentages
  std::map<long, std::pair<double, double>> per_method;
  long queries = 0;
};

struct ChanceLevel {
  double t1 = 0.0, t5 = 0.0;  // Monte-Carlo percentages
};

struct Histogram {
  std::vector<double> edges;                     // bins+1 over [-1,1]
  std::vector<long> fake, retraced, real;        // counts per bin
};

struct Preservation {
  std::vector<double> sims;  // similarity(output, input) per source face
  SimilaritySummary summary;
  double omega_entropy_real = -1.0;  // mean resolver entropy on source faces
  double omega_entropy_fake = -1.0;  // and on fakes
};

class Evaluator {
 public:
  Evaluator(const std::string& dataset_dir, const EvalConfig& cfg);

  const DatasetManifest& manifest() const { return man_; }
  const EvalConfig& config() const { return cfg_; }
  double tau() const { return man_.tau; }

  // similarity(retraced, target) under both embedders; rejects empty splits
  IdSimilarity id_similarity(const RetraceFn& retrace,
                             const std::string& split) const;

  // per-method galleries of canonical renders of distinct identities; ranks
  // broken deterministically by lowest gallery index
  Retrieval id_retrieval(const RetraceFn& retrace, const std::string& split,
                         long gallery_size) const;
  ChanceLevel retrieval_chance(long gallery_size) const;

  // fake/retraced/real similarity histograms per method; CSV per method
  std::map<long, Histogram> similarity_distribution(const RetraceFn& retrace,
                                                    const std::string& split) const;
  void write_histograms(const std::map<long, Histogram>& hists,
                        const std::string& dir, const std::string& stem) const;

  // forward on held-out source faces + resolver entropy comparison
  Preservation real_face_preservation(const RetraceFn& retrace,
                                      const ResolveFn* resolve) const;

  // mAS per method: re-swap the estimated identity of each retraced face
  std::map<long, double> semantic_consistency(const RetraceFn& retrace,
                                              const std::string& split) const;

  // retraced faces produced by the analytic decoding oracle (ceiling)
  RetraceFn oracle_retrace_fn(const std::string& split) const;

  const Embedder& embedder_a() const { return emb_a_; }
  const Embedder& embedder_b() const { return emb_b_; }

 private:
  std::vector<long> split_records(const std::string& split,
                                  bool fakes_only) const;
  std::string dir_;
  EvalConfig cfg_;
  DatasetManifest man_;
  SwapFamily family_;
  Embedder emb_a_, emb_b_;
};

// value -> mean similarity curve; trains one reduced model per value
struct AblationPoint {
  double value = 0.0;
  double score_a = 0.0, score_b = 0.0;
};
std::vector<AblationPoint> ablate(const std::string& parameter,
                                  const std::vector<double>& values,
                                  const TrainConfig& base,
                                  const std::string& dataset_dir,
                                  const std::string& out_dir,
                                  const EvalConfig& ecfg);
void write_ablation_csv(const std::vector<AblationPoint>& curve,
                        const std::string& path);

// full report: similarities, retrieval with chance levels, per-split metrics,
// preservation, semantic consistency; written as versioned JSON
void write_report(const std::string& path, const Evaluator& ev,
                  const Model& model, uint64_t checkpoint_hash);

}  // namespace idrt
