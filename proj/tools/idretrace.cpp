// idretrace: single entry point for the full experiment lifecycle.
// Exit codes: 0 ok, 1 internal error, 2 usage, 3 missing input,
// 4 schema mismatch, 5 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "idrt/blob.hpp"
#include "idrt/evaluator.hpp"
#include "idrt/gradsuite.hpp"
#include "idrt/synthswap.hpp"
#include "idrt/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0, kExitInternal = 1, kExitUsage = 2,
              kExitMissingInput = 3, kExitSchema = 4, kExitNumeric = 5;

struct CliError {
  int code;
  std::string category;
  std::string message;
};

void require_file(const std::string& path) {
  if (!fs::exists(path))
    throw CliError{kExitMissingInput, "missing-input", path};
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  require_file(path);
  std::ifstream is(path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw CliError{kExitSchema, "schema-mismatch", std::string(e.what())};
  }
  return j;
}

template <typename T>
void merge(const json& cfg, const char* key, T& value) {
  if (cfg.contains(key)) value = cfg.at(key).get<T>();
}

// write a [3,H,W] tensor in [0,1] as a binary PPM
void write_ppm(const std::string& path, const idrt::Tensor& img) {
  long S = img.dim(1);
  std::ofstream os(path, std::ios::binary);
  os << "P6\n" << S << " " << img.dim(2) << "\n255\n";
  long plane = img.dim(1) * img.dim(2);
  for (long p = 0; p < plane; ++p)
    for (long c = 0; c < 3; ++c) {
      double v = img.data()[c * plane + p];
      os.put(static_cast<char>(
          std::clamp<long>(std::lround(v * 255.0), 0, 255)));
    }
}

int run(int argc, char** argv) {
  CLI::App app{"IDRetracor experiment lifecycle"};
  app.require_subcommand(1);
  // let global flags (--seed/--out/...) appear after the subcommand name
  app.fallthrough();

  std::string config_path, out_dir = ".", dataset_dir, checkpoint_path;
  uint64_t seed = 7;
  long workers = 1;
  app.add_option("--config", config_path, "JSON config file")->capture_default_str();
  app.add_option("--seed", seed, "global seed")->capture_default_str();
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--workers", workers, "worker pool cap (1 = deterministic)")
      ->capture_default_str();

  // craft
  auto* craft = app.add_subcommand("craft", "generate the swap dataset");
  idrt::CraftConfig cc;
  std::vector<double> eps_override;
  craft->add_option("--n", cc.n, "number of swap methods");
  craft->add_option("--train-pairs", cc.train_pairs_per_method,
                    "train pairs per method");
  craft->add_option("--test-pairs", cc.test_pairs_per_method,
                    "test pairs per method");
  craft->add_option("--seen-pairs", cc.seen_pairs_per_method,
                    "pairs per method in each seen split");
  craft->add_option("--train-ids", cc.train_ids, "train identity pool");
  craft->add_option("--test-ids", cc.test_ids, "unseen identity pool");
  craft->add_option("--ss-train", cc.ss_train, "source-source train pairs");
  craft->add_option("--ss-test", cc.ss_test, "source-source test pairs");
  craft->add_option("--eps", eps_override, "per-method residual amplitudes");
  craft->add_option("--label-noise", cc.label_noise,
                    "fraction of train labels corrupted");
  craft->add_option("--image-size", cc.image_size, "square image size");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  idrt::TrainConfig tc;
  std::string resume_from;
  tr->add_option("--dataset", dataset_dir, "dataset directory")->required();
  tr->add_option("--model", tc.model, "idretracor | vu-s | vu-m");
  tr->add_option("--method", tc.vus_method, "method filter for vu-s");
  tr->add_option("--epochs", tc.epochs, "training epochs");
  tr->add_option("--batch-size", tc.batch_size, "batch size");
  tr->add_option("--lr", tc.lr, "learning rate");
  tr->add_option("--alpha", tc.loss.alpha, "identity loss weight");
  tr->add_option("--gamma", tc.loss.gamma, "resolving loss weight");
  tr->add_option("--theta", tc.loss.theta, "fusion regularization");
  tr->add_option("--base-channels", tc.base_channels, "UNet width");
  tr->add_option("--resume", resume_from, "checkpoint to resume from");

  // retrace
  auto* rt = app.add_subcommand("retrace", "run a checkpoint over a split");
  std::string split = "test-unseen";
  bool ppm = false;
  long limit = 0;
  rt->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  rt->add_option("--dataset", dataset_dir, "dataset directory")->required();
  rt->add_option("--split", split, "dataset split");
  rt->add_option("--limit", limit, "max samples (0 = all)");
  rt->add_flag("--ppm", ppm, "also dump PPM images");

  // eval
  auto* ev = app.add_subcommand("eval", "full evaluation report");
  idrt::EvalConfig ec;
  ev->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  ev->add_option("--dataset", dataset_dir, "dataset directory")->required();
  ev->add_option("--gallery", ec.gallery_size, "retrieval gallery size");
  ev->add_option("--split", ec.split, "primary split");
  ev->add_option("--max-pairs", ec.max_pairs_per_method,
                 "cap pairs per method (0 = all)");
  ev->add_option("--semantic-samples", ec.semantic_samples_per_method,
                 "mAS samples per method");

  // ablate
  auto* ab = app.add_subcommand("ablate", "parameter sweep");
  std::string parameter = "theta";
  std::vector<double> values;
  idrt::TrainConfig abase;
  abase.epochs = 5;
  ab->add_option("--dataset", dataset_dir, "dataset directory")->required();
  ab->add_option("--parameter", parameter, "theta | alpha");
  ab->add_option("--values", values, "sweep values")->required();
  ab->add_option("--epochs", abase.epochs, "epochs per point");
  ab->add_option("--base-channels", abase.base_channels, "UNet width");
  ab->add_option("--max-pairs", ec.max_pairs_per_method,
                 "cap evaluation pairs per method");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference suite");
  double tol = 1e-4;
  gc->add_option("--tol", tol, "relative tolerance");

  // oracle
  auto* orc = app.add_subcommand("oracle", "analytic decoding ceiling");
  orc->add_option("--dataset", dataset_dir, "dataset directory")->required();
  orc->add_option("--split", split, "dataset split");
  orc->add_option("--gallery", ec.gallery_size, "retrieval gallery size");
  orc->add_option("--max-pairs", ec.max_pairs_per_method,
                  "cap pairs per method (0 = all)");

  // resolve
  auto* rs = app.add_subcommand("resolve", "print omega rows for a split");
  rs->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  rs->add_option("--dataset", dataset_dir, "dataset directory")->required();
  rs->add_option("--split", split, "dataset split");
  rs->add_option("--limit", limit, "max samples (0 = all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: usage: " << e.what() << "\n";
    return kExitUsage;
  }
  json cfg = load_config(config_path);
  merge(cfg, "seed", seed);
  if (workers < 1)
    throw CliError{kExitUsage, "usage", "--workers must be >= 1"};

  if (*craft) {
    cc.seed = seed;
    merge(cfg, "n", cc.n);
    merge(cfg, "train_pairs_per_method", cc.train_pairs_per_method);
    merge(cfg, "test_pairs_per_method", cc.test_pairs_per_method);
    merge(cfg, "seen_pairs_per_method", cc.seen_pairs_per_method);
    merge(cfg, "train_ids", cc.train_ids);
    merge(cfg, "test_ids", cc.test_ids);
    merge(cfg, "label_noise", cc.label_noise);
    if (!eps_override.empty()) cc.eps = eps_override;
    idrt::DatasetManifest man = idrt::craft_dataset(cc, out_dir);
    std::cout << json{{"records", man.records.size()},
                      {"tau", man.tau},
                      {"premise2_rate", man.premise2_rate},
                      {"manifest", out_dir + "/manifest.json"}}
                     .dump()
              << "\n";
    return kExitOk;
  }

  if (*tr) {
    require_file(dataset_dir + "/manifest.json");
    if (!resume_from.empty()) require_file(resume_from);
    tc.seed = seed;
    merge(cfg, "epochs", tc.epochs);
    merge(cfg, "batch_size", tc.batch_size);
    merge(cfg, "lr", tc.lr);
    merge(cfg, "base_channels", tc.base_channels);
    idrt::DatasetManifest man =
        idrt::load_manifest(dataset_dir + "/manifest.json");
    tc.loss.n = man.config.n;
    idrt::TrainResult res = idrt::train(tc, dataset_dir, out_dir, resume_from);
    std::cout << json{{"final", res.final_path},
                      {"best", res.best_path},
                      {"best_val_sim", res.best_val},
                      {"last_loss", res.last_loss},
                      {"log", res.log_path}}
                     .dump()
              << "\n";
    return kExitOk;
  }

  if (*rt || *rs) {
    require_file(checkpoint_path);
    require_file(dataset_dir + "/manifest.json");
    idrt::Checkpoint ck = idrt::load_checkpoint(checkpoint_path);
    idrt::DatasetManifest man =
        idrt::load_manifest(dataset_dir + "/manifest.json");
    if (ck.image_size != man.config.image_size || ck.n != man.config.n)
      throw CliError{kExitSchema, "schema-mismatch",
                     "checkpoint/dataset geometry differs"};
    std::vector<long> idx;
    for (long i = 0; i < static_cast<long>(man.records.size()); ++i)
      if (man.records[i].split == split &&
          man.records[i].kind == "target-fake")
        idx.push_back(i);
    if (limit > 0 && static_cast<long>(idx.size()) > limit) idx.resize(limit);
    if (idx.empty())
      throw CliError{kExitMissingInput, "missing-input",
                     "split '" + split + "' has no samples"};
    long S = man.config.image_size;
    idrt::NoGradGuard ng;
    if (*rs) {
      if (!ck.model.has_resolver)
        throw CliError{kExitUsage, "usage", "checkpoint has no resolver"};
      json rows = json::array();
      for (long i : idx) {
        auto [x, y] = idrt::load_pair(dataset_dir, man.records[i]);
        idrt::Tensor omega = ck.model.resolver.resolve(
            idrt::Tensor({1, 3, S, S}, std::vector<double>(x.data())));
        rows.push_back(json{{"record", i},
                            {"c", man.records[i].c},
                            {"omega", omega.data()}});
      }
      std::cout << rows.dump(1) << "\n";
      return kExitOk;
    }
    fs::create_directories(out_dir);
    for (long i : idx) {
      auto [x, y] = idrt::load_pair(dataset_dir, man.records[i]);
      idrt::ForwardFull f = ck.model.forward(
          idrt::Tensor({1, 3, S, S}, std::vector<double>(x.data())));
      idrt::Tensor img({3, S, S}, std::vector<double>(f.retraced.data()));
      std::string stem = out_dir + "/retraced_" + std::to_string(i);
      idrt::save_blob(stem + ".idrt", idrt::Blob{img.shape(), img.data()});
      if (ppm) write_ppm(stem + ".ppm", img);
    }
    std::cout << json{{"retraced", idx.size()}, {"out", out_dir}}.dump() << "\n";
    return kExitOk;
  }

  if (*ev) {
    require_file(checkpoint_path);
    require_file(dataset_dir + "/manifest.json");
    ec.seed = seed;
    idrt::Checkpoint ck = idrt::load_checkpoint(checkpoint_path);
    idrt::Evaluator evaluator(dataset_dir, ec);
    if (ck.image_size != evaluator.manifest().config.image_size)
      throw CliError{kExitSchema, "schema-mismatch",
                     "checkpoint/dataset geometry differs"};
    fs::create_directories(out_dir);
    idrt::write_report(out_dir + "/report.json", evaluator, ck.model,
                       idrt::params_hash(ck.model.params));
    auto hists = evaluator.similarity_distribution(
        idrt::model_retrace_fn(ck.model), ec.split);
    evaluator.write_histograms(hists, out_dir, "hist");
    std::cout << json{{"report", out_dir + "/report.json"}}.dump() << "\n";
    return kExitOk;
  }

  if (*ab) {
    require_file(dataset_dir + "/manifest.json");
    abase.seed = seed;
    idrt::DatasetManifest man =
        idrt::load_manifest(dataset_dir + "/manifest.json");
    abase.loss.n = man.config.n;
    ec.seed = seed;
    fs::create_directories(out_dir);
    auto curve = idrt::ablate(parameter, values, abase, dataset_dir, out_dir, ec);
    std::string csv = out_dir + "/ablation_" + parameter + ".csv";
    idrt::write_ablation_csv(curve, csv);
    std::cout << json{{"csv", csv}, {"points", curve.size()}}.dump() << "\n";
    return kExitOk;
  }

  if (*gc) {
    auto reports = idrt::run_gradcheck_suite(seed);
    bool ok = true;
    std::printf("%-28s %14s %8s\n", "layer", "max_rel_err", "checked");
    for (const auto& r : reports) {
      std::printf("%-28s %14.3e %8ld\n", r.name.c_str(), r.max_rel_err,
                  r.checked);
      if (r.max_rel_err > tol) ok = false;
    }
    if (!ok)
      throw CliError{kExitNumeric, "numeric",
                     "gradient check exceeded tolerance"};
    return kExitOk;
  }

  if (*orc) {
    require_file(dataset_dir + "/manifest.json");
    ec.seed = seed;
    idrt::Evaluator evaluator(dataset_dir, ec);
    idrt::Retrieval r = evaluator.id_retrieval(
        evaluator.oracle_retrace_fn(split), split, ec.gallery_size);
    idrt::ChanceLevel chance = evaluator.retrieval_chance(ec.gallery_size);
    std::cout << json{{"oracle_t1", r.t1},
                      {"oracle_t5", r.t5},
                      {"queries", r.queries},
                      {"chance_t1", chance.t1},
                      {"chance_t5", chance.t5}}
                     .dump()
              << "\n";
    return kExitOk;
  }

  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.category << ": " << e.message << "\n";
    return e.code;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::cerr << "error: ";
    if (msg.find("schema") != std::string::npos) {
      std::cerr << "schema-mismatch: " << msg << "\n";
      return kExitSchema;
    }
    if (msg.find("cannot read") != std::string::npos ||
        msg.find("not a checkpoint") != std::string::npos) {
      std::cerr << "missing-input: " << msg << "\n";
      return kExitMissingInput;
    }
    if (msg.find("non-finite") != std::string::npos ||
        msg.find("rank-deficient") != std::string::npos) {
      std::cerr << "numeric: " << msg << "\n";
      return kExitNumeric;
    }
    std::cerr << "internal: " << msg << "\n";
    return kExitInternal;
  }
}
