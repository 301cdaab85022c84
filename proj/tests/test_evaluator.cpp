#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "idrt/evaluator.hpp"

using namespace idrt;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string& dataset_dir() {
  static std::string dir = [] {
    fs::path p = fs::temp_directory_path() / "idrt_eval_ds";
    fs::remove_all(p);
    CraftConfig c;
    c.seed = 601;
    c.n = 2;
    c.train_pairs_per_method = 5;
    c.test_pairs_per_method = 8;
    c.seen_pairs_per_method = 2;
    c.train_ids = 10;
    c.test_ids = 6;
    c.ss_train = 4;
    c.ss_test = 3;
    c.tau_pairs = 1000;
    craft_dataset(c, p.string());
    return p.string();
  }();
  return dir;
}

EvalConfig small_eval() {
  EvalConfig e;
  e.gallery_size = 5;
  e.mc_trials = 4000;
  e.semantic_samples_per_method = 4;
  e.seed = 31;
  return e;
}

const Evaluator& shared_eval() {
  static Evaluator ev(dataset_dir(), small_eval());
  return ev;
}

// returns the true target for every crafted pair (upper bound stub)
RetraceFn perfect_stub(const std::string& dir) {
  DatasetManifest man = load_manifest(dir + "/manifest.json");
  long S = man.config.image_size;
  auto lookup = std::make_shared<std::map<std::vector<double>, Tensor>>();
  for (const auto& r : man.records) {
    auto [x, y] = load_pair(dir, r);
    (*lookup)[x.data()] = y;
  }
  return [lookup, S](const Tensor& batch) {
    long B = batch.dim(0);
    long sz = 3 * S * S;
    std::vector<double> out(B * sz);
    for (long b = 0; b < B; ++b) {
      std::vector<double> key(batch.data().begin() + b * sz,
                              batch.data().begin() + (b + 1) * sz);
      auto it = lookup->find(key);
      REQUIRE(it != lookup->end());
      std::copy(it->second.data().begin(), it->second.data().end(),
                out.begin() + b * sz);
    }
    return Tensor({B, 3, S, S}, std::move(out));
  };
}

}  // namespace

TEST_CASE("perfect stub scores mean similarity 1.0 and t1 = 100%") {
  const Evaluator& ev = shared_eval();
  RetraceFn perfect = perfect_stub(dataset_dir());
  IdSimilarity s = ev.id_similarity(perfect, "test-unseen");
  CHECK(s.overall_a.mean == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(s.overall_b.mean == doctest::Approx(1.0).epsilon(1e-9));
  Retrieval r = ev.id_retrieval(perfect, "test-unseen", 5);
  CHECK(r.t1 == doctest::Approx(100.0));
  CHECK(r.t5 == doctest::Approx(100.0));
}

TEST_CASE("empty split is rejected") {
  const Evaluator& ev = shared_eval();
  CHECK_THROWS(ev.id_similarity(fake_baseline_fn(), "no-such-split"));
  CHECK_THROWS(ev.id_retrieval(fake_baseline_fn(), "no-such-split", 5));
}

TEST_CASE("Monte-Carlo chance level approximates 1/G and 5/G") {
  const Evaluator& ev = shared_eval();
  ChanceLevel c50 = ev.retrieval_chance(50);
  CHECK(c50.t1 == doctest::Approx(2.0).epsilon(0.5));
  CHECK(c50.t5 == doctest::Approx(10.0).epsilon(0.3));
  ChanceLevel c5 = ev.retrieval_chance(5);
  CHECK(c5.t1 == doctest::Approx(20.0).epsilon(0.2));
}

TEST_CASE("retrieval is deterministic for a fixed retrace function") {
  const Evaluator& ev = shared_eval();
  Retrieval a = ev.id_retrieval(fake_baseline_fn(), "test-unseen", 5);
  Retrieval b = ev.id_retrieval(fake_baseline_fn(), "test-unseen", 5);
  CHECK(a.t1 == b.t1);
  CHECK(a.t5 == b.t5);
  CHECK(a.queries == b.queries);
}

TEST_CASE("gallery construction rejects duplicates and short registries") {
  const Evaluator& ev = shared_eval();
  // more gallery slots than distinct identities in the split
  CHECK_THROWS(ev.id_retrieval(fake_baseline_fn(), "test-unseen", 1000));

  // doctored manifest with a duplicated identity seed
  fs::path dup = fs::temp_directory_path() / "idrt_eval_dup";
  fs::remove_all(dup);
  fs::copy(dataset_dir(), dup, fs::copy_options::recursive);
  DatasetManifest man = load_manifest((dup / "manifest.json").string());
  auto& reg = man.id_registry.at("test-unseen");
  reg[1] = reg[0];
  save_manifest(man, (dup / "manifest.json").string());
  Evaluator ev2(dup.string(), small_eval());
  CHECK_THROWS(ev2.id_retrieval(fake_baseline_fn(), "test-unseen", 5));
  fs::remove_all(dup);
}

TEST_CASE("histogram bin counts sum to the pair counts") {
  const Evaluator& ev = shared_eval();
  auto hists = ev.similarity_distribution(fake_baseline_fn(), "test-unseen");
  CHECK(hists.size() == 2);  // n = 2 methods
  long expected = 8;         // test pairs per method
  for (const auto& [method, h] : hists) {
    CHECK(h.edges.size() == 41);
    long f = 0, r = 0, re = 0;
    for (long v : h.fake) f += v;
    for (long v : h.retraced) r += v;
    for (long v : h.real) re += v;
    CHECK(f == expected);
    CHECK(r == expected);
    CHECK(re == expected);
  }
  // real-vs-real mass sits above tau
  double tau = ev.tau();
  for (const auto& [method, h] : hists) {
    long above = 0, total = 0;
    for (size_t i = 0; i < h.real.size(); ++i) {
      total += h.real[i];
      if (0.5 * (h.edges[i] + h.edges[i + 1]) > tau) above += h.real[i];
    }
    CHECK(above * 10 >= total * 9);
  }
}

TEST_CASE("histogram CSVs are written") {
  const Evaluator& ev = shared_eval();
  auto hists = ev.similarity_distribution(fake_baseline_fn(), "test-unseen");
  fs::path out = fs::temp_directory_path() / "idrt_eval_hist";
  fs::remove_all(out);
  fs::create_directories(out);
  ev.write_histograms(hists, out.string(), "hist");
  for (const auto& [method, h] : hists)
    CHECK(fs::exists(out / ("hist_method" + std::to_string(method) + ".csv")));
  fs::remove_all(out);
}

TEST_CASE("real-face preservation: identity stub scores 1.0") {
  const Evaluator& ev = shared_eval();
  RetraceFn identity = [](const Tensor& x) { return x; };
  Preservation p = ev.real_face_preservation(identity, nullptr);
  CHECK(p.summary.count > 0);
  CHECK(p.summary.mean == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(p.omega_entropy_real == -1.0);  // no resolver provided

  ResolveFn uniform = [](const Tensor& x) {
    return Tensor({x.dim(0), 4}, 0.25);
  };
  Preservation q = ev.real_face_preservation(identity, &uniform);
  CHECK(q.omega_entropy_real == doctest::Approx(std::log(4.0)).epsilon(1e-9));
  CHECK(q.omega_entropy_fake == doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("semantic consistency of the perfect stub is near 1") {
  const Evaluator& ev = shared_eval();
  auto mas = ev.semantic_consistency(perfect_stub(dataset_dir()), "test-unseen");
  CHECK(mas.size() == 2);
  for (const auto& [method, score] : mas) CHECK(score > 0.9);
}

TEST_CASE("oracle retrace achieves perfect retrieval on this small set") {
  const Evaluator& ev = shared_eval();
  Retrieval r =
      ev.id_retrieval(ev.oracle_retrace_fn("test-unseen"), "test-unseen", 5);
  CHECK(r.t1 >= 95.0);
}

TEST_CASE("ablation rejects invalid sweep values") {
  TrainConfig base;
  EvalConfig e = small_eval();
  CHECK_THROWS(ablate("theta", {0.0, 0.5}, base, dataset_dir(), "/tmp/x", e));
  CHECK_THROWS(ablate("alpha", {-1.0}, base, dataset_dir(), "/tmp/x", e));
  CHECK_THROWS(ablate("beta", {0.5}, base, dataset_dir(), "/tmp/x", e));
}

TEST_CASE("ablation csv shape") {
  std::vector<AblationPoint> curve = {{0.3, 0.5, 0.52}, {0.9, 0.7, 0.69}};
  fs::path out = fs::temp_directory_path() / "idrt_eval_abl.csv";
  write_ablation_csv(curve, out.string());
  std::ifstream is(out);
  std::string line;
  long rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 3);  // header + 2 points
  fs::remove(out);
}

TEST_CASE("report json is versioned and loads back") {
  const Evaluator& ev = shared_eval();
  TrainConfig t;
  t.model = "vu-m";
  t.epochs = 1;
  t.batch_size = 4;
  t.base_channels = 4;
  t.loss.n = 2;
  Model mdl = build_model(t, 32, 2);
  fs::path out = fs::temp_directory_path() / "idrt_eval_report.json";
  write_report(out.string(), ev, mdl, params_hash(mdl.params));
  std::ifstream is(out);
  json j;
  is >> j;
  CHECK(j.contains("version"));
  CHECK(j.contains("tau"));
  CHECK(j.contains("retrieval_chance"));
  CHECK(j.contains("splits"));
  fs::remove(out);
}

int main(int argc, char** argv) {
  int rc = doctest::Context(argc, argv).run();
  fs::remove_all(fs::temp_directory_path() / "idrt_eval_ds");
  return rc;
}
