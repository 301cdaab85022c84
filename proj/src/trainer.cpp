#include "idrt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "idrt/blob.hpp"

namespace idrt {

using nlohmann::json;

void TrainConfig::validate() const {
  if (model != "idretracor" && model != "vu-s" && model != "vu-m")
    throw std::invalid_argument("train: unknown model kind '" + model + "'");
  if (epochs < 1 || batch_size < 1 || base_channels < 1)
    throw std::invalid_argument("train: epochs, batch size and channels must be positive");
  if (lr <= 0.0) throw std::invalid_argument("train: learning rate must be positive");
  if (val_fraction < 0.0 || val_fraction >= 1.0)
    throw std::invalid_argument("train: val_fraction must be in [0,1)");
  loss.validate();
}

void Adam::init(const ParamList& params) {
  t = 0;
  m.assign(params.size(), {});
  v.assign(params.size(), {});
  for (size_t i = 0; i < params.size(); ++i) {
    m[i].assign(params[i].second.numel(), 0.0);
    v[i].assign(params[i].second.numel(), 0.0);
  }
}

void Adam::step(ParamList& params) {
  if (m.size() != params.size())
    throw std::logic_error("adam: step before init");
  ++t;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].second;
    long sz = p.numel();
    const std::vector<double>* g = p.has_grad() ? &p.grad() : nullptr;
    std::vector<double>& val = p.mutable_data();
    for (long j = 0; j < sz; ++j) {
      double gj = g ? (*g)[j] : 0.0;
      if (!std::isfinite(gj))
        throw std::runtime_error("adam: non-finite gradient in parameter '" +
                                 params[i].first + "'");
      m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * gj;
      v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * gj * gj;
      double mh = m[i][j] / bc1;
      double vh = v[i][j] / bc2;
      val[j] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

Model build_model(const TrainConfig& cfg, long image_size, long n) {
  cfg.validate();
  Model mdl;
  mdl.config = cfg;
  mdl.has_resolver = cfg.is_idretracor();
  long groups = mdl.has_resolver ? n : 1;
  Rng rng(derive_seed(cfg.seed, 0x6d6f646cULL));
  RetracorConfig rc{groups, 3, image_size, cfg.base_channels};
  mdl.retracor = Retracor(rc, rng);
  mdl.params = mdl.retracor.named_params();
  if (mdl.has_resolver) {
    ResolverConfig sc{n, 3, image_size, cfg.base_channels};
    mdl.resolver = Resolver(sc, rng);
    ParamList rp = mdl.resolver.named_params();
    mdl.params.insert(mdl.params.end(), rp.begin(), rp.end());
  }
  return mdl;
}

ForwardFull Model::forward(const Tensor& images) const {
  if (has_resolver) return forward_full(images, resolver, retracor);
  ForwardFull out;
  out.omega = Tensor({images.dim(0), 1}, 1.0);
  out.retraced = retracor.retrace(images, out.omega);
  return out;
}

uint64_t params_hash(const ParamList& params) {
  uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, p] : params) {
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    for (double d : p.data()) {
      uint64_t bits;
      std::memcpy(&bits, &d, sizeof bits);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xffULL;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

namespace {

json config_to_json(const TrainConfig& c) {
  return json{{"model", c.model},
              {"vus_method", c.vus_method},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"eps_opt", c.eps_opt},
              {"alpha", c.loss.alpha},
              {"gamma", c.loss.gamma},
              {"theta", c.loss.theta},
              {"n", c.loss.n},
              {"base_channels", c.base_channels},
              {"val_fraction", c.val_fraction},
              {"seed", c.seed}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.model = j.at("model").get<std::string>();
  c.vus_method = j.at("vus_method").get<long>();
  c.epochs = j.at("epochs").get<long>();
  c.batch_size = j.at("batch_size").get<long>();
  c.lr = j.at("lr").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps_opt = j.at("eps_opt").get<double>();
  c.loss.alpha = j.at("alpha").get<double>();
  c.loss.gamma = j.at("gamma").get<double>();
  c.loss.theta = j.at("theta").get<double>();
  c.loss.n = j.at("n").get<long>();
  c.base_channels = j.at("base_channels").get<long>();
  c.val_fraction = j.at("val_fraction").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

void write_exact(std::ostream& os, const void* p, size_t len) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(len));
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  json j;
  j["version"] = 1;
  j["config"] = config_to_json(ck.config);
  j["epoch"] = ck.epoch;
  j["best_val"] = ck.best_val;
  j["image_size"] = ck.image_size;
  j["n"] = ck.n;
  j["adam_t"] = ck.adam.t;
  json names = json::array();
  for (const auto& [name, p] : ck.model.params) names.push_back(name);
  j["params"] = std::move(names);
  std::string header = j.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write("IDRC", 4);
  uint64_t hlen = header.size();
  write_exact(os, &hlen, sizeof hlen);
  os.write(header.data(), static_cast<std::streamsize>(hlen));
  for (const auto& [name, p] : ck.model.params)
    write_blob(os, Blob{p.shape(), p.data()});
  for (const auto& mom : {&ck.adam.m, &ck.adam.v})
    for (const auto& buf : *mom)
      write_blob(os, Blob{{static_cast<long>(buf.size())}, buf});
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "IDRC", 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  uint64_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  std::string header(hlen, '\0');
  is.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw std::runtime_error("truncated checkpoint header: " + path);
  json j = json::parse(header);
  if (j.at("version").get<long>() != 1)
    throw std::runtime_error("checkpoint schema version mismatch");

  Checkpoint ck;
  ck.config = config_from_json(j.at("config"));
  ck.epoch = j.at("epoch").get<long>();
  ck.best_val = j.at("best_val").get<double>();
  ck.image_size = j.at("image_size").get<long>();
  ck.n = j.at("n").get<long>();
  ck.model = build_model(ck.config, ck.image_size, ck.n);

  std::vector<std::string> names = j.at("params").get<std::vector<std::string>>();
  if (names.size() != ck.model.params.size())
    throw std::runtime_error("checkpoint parameter list mismatch");
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] != ck.model.params[i].first)
      throw std::runtime_error("checkpoint parameter name mismatch: " +
                               names[i] + " vs " + ck.model.params[i].first);
    Blob b = read_blob(is);
    Tensor& p = ck.model.params[i].second;
    if (b.shape != p.shape())
      throw std::runtime_error("checkpoint shape mismatch for " + names[i]);
    p.mutable_data() = std::move(b.data);
  }
  ck.adam.lr = ck.config.lr;
  ck.adam.beta1 = ck.config.beta1;
  ck.adam.beta2 = ck.config.beta2;
  ck.adam.eps = ck.config.eps_opt;
  ck.adam.t = j.at("adam_t").get<long>();
  for (auto* mom : {&ck.adam.m, &ck.adam.v}) {
    mom->clear();
    for (size_t i = 0; i < names.size(); ++i) {
      Blob b = read_blob(is);
      if (static_cast<long>(b.data.size()) != ck.model.params[i].second.numel())
        throw std::runtime_error("checkpoint moment size mismatch");
      mom->push_back(std::move(b.data));
    }
  }
  return ck;
}

namespace {

struct BatchTensors {
  Tensor input, target;
  std::vector<long> c;
  std::vector<char> ss;
};

BatchTensors assemble(const std::string& dir, const DatasetManifest& man,
                      const std::vector<long>& idx, long lo, long hi) {
  long S = man.config.image_size;
  long B = hi - lo;
  std::vector<double> in(B * 3 * S * S), tg(B * 3 * S * S);
  BatchTensors bt;
  for (long b = 0; b < B; ++b) {
    const SampleRecord& rec = man.records[idx[lo + b]];
    auto [x, y] = load_pair(dir, rec);
    std::copy(x.data().begin(), x.data().end(), in.begin() + b * 3 * S * S);
    std::copy(y.data().begin(), y.data().end(), tg.begin() + b * 3 * S * S);
    bt.c.push_back(rec.c);
    bt.ss.push_back(rec.kind == "source-source" ? 1 : 0);
  }
  bt.input = Tensor({B, 3, S, S}, std::move(in));
  bt.target = Tensor({B, 3, S, S}, std::move(tg));
  return bt;
}

}  // namespace

TrainResult train(const TrainConfig& cfg_in, const std::string& dataset_dir,
                  const std::string& out_dir, const std::string& resume_from) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  DatasetManifest man = load_manifest(dataset_dir + "/manifest.json");
  if (cfg.is_idretracor() && cfg.loss.n != man.config.n)
    throw std::invalid_argument(
        "train: loss n=" + std::to_string(cfg.loss.n) +
        " does not match dataset n=" + std::to_string(man.config.n));
  if (cfg.model == "vu-s" &&
      (cfg.vus_method < 0 || cfg.vus_method >= man.config.n))
    throw std::invalid_argument("train: vu-s method index out of range");

  // training pool: train split, filtered to one method for vu-s
  std::vector<long> pool;
  for (long i = 0; i < static_cast<long>(man.records.size()); ++i) {
    const SampleRecord& r = man.records[i];
    if (r.split != "train") continue;
    if (cfg.model == "vu-s" && r.kind == "target-fake" && r.c != cfg.vus_method)
      continue;
    pool.push_back(i);
  }
  if (pool.empty()) throw std::runtime_error("train: empty training pool");

  // seed-determined held-out validation slice
  {
    Rng vs(derive_seed(cfg.seed, 0x7673706cULL));
    vs.shuffle(pool);
  }
  long val_count = static_cast<long>(std::floor(cfg.val_fraction * pool.size()));
  std::vector<long> val(pool.end() - val_count, pool.end());
  pool.resize(pool.size() - val_count);

  std::filesystem::create_directories(out_dir);
  Embedder emb = standard_embedder(man.config.embedder_seed, man.config.m,
                                   man.config.image_size);

  Checkpoint ck;
  long start_epoch = 0;
  if (resume_from.empty()) {
    ck.config = cfg;
    ck.image_size = man.config.image_size;
    ck.n = man.config.n;
    ck.model = build_model(cfg, ck.image_size, ck.n);
    ck.adam = Adam{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_opt};
    ck.adam.init(ck.model.params);
  } else {
    ck = load_checkpoint(resume_from);
    // the epoch budget may grow on resume; everything else must match or the
    // continued run would not reproduce the uninterrupted one
    json a = config_to_json(ck.config), b = config_to_json(cfg);
    a.erase("epochs");
    b.erase("epochs");
    if (a != b)
      throw std::invalid_argument("train: resume config differs from checkpoint");
    ck.config = cfg;
    start_epoch = ck.epoch;
  }

  TrainResult res;
  res.final_path = out_dir + "/final.ckpt";
  res.best_path = out_dir + "/best.ckpt";
  res.log_path = out_dir + "/train_log.jsonl";
  res.best_val = ck.best_val;
  std::ofstream log(res.log_path,
                    resume_from.empty() ? std::ios::trunc : std::ios::app);

  auto validate_sim = [&]() {
    if (val.empty()) return -2.0;
    NoGradGuard ng;
    double sum = 0.0;
    long count = 0;
    for (size_t off = 0; off < val.size(); off += 16) {
      long hi = std::min(off + 16, val.size());
      BatchTensors bt = assemble(dataset_dir, man, val, static_cast<long>(off),
                                 static_cast<long>(hi));
      ForwardFull f = ck.model.forward(bt.input);
      Tensor vr = emb.embed(f.retraced);
      Tensor vt = emb.embed(bt.target);
      long B = bt.input.dim(0), d = vr.dim(1);
      for (long b = 0; b < B; ++b) {
        double dot = 0.0;
        for (long j = 0; j < d; ++j)
          dot += vr.data()[b * d + j] * vt.data()[b * d + j];
        sum += dot;
        ++count;
      }
    }
    return sum / static_cast<double>(count);
  };

  for (long epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<long> order = pool;
    Rng sh(derive_seed(cfg.seed, 0x7368666cULL, static_cast<uint64_t>(epoch)));
    sh.shuffle(order);
    for (size_t off = 0; off < order.size();
         off += static_cast<size_t>(cfg.batch_size)) {
      long hi = static_cast<long>(
          std::min(off + static_cast<size_t>(cfg.batch_size), order.size()));
      BatchTensors bt =
          assemble(dataset_dir, man, order, static_cast<long>(off), hi);
      ForwardFull f = ck.model.forward(bt.input);
      Tensor vr = emb.embed(f.retraced);
      Tensor vt;
      {
        NoGradGuard ng;
        vt = emb.embed(bt.target);
      }
      Tensor omega_for_loss =
          ck.model.has_resolver ? f.omega : Tensor();  // drop res term for VU
      LossBreakdown lb = total_loss(f.retraced, bt.target, vr, vt,
                                    omega_for_loss, bt.c, bt.ss, cfg.loss);
      if (!std::isfinite(lb.total_value)) {
        std::string op = find_nonfinite_op(lb.total);
        throw std::runtime_error("train: non-finite loss (op '" + op + "')");
      }
      for (auto& [name, p] : ck.model.params) p.zero_grad();
      backward(lb.total);
      ck.adam.step(ck.model.params);

      double acc = -1.0;
      if (ck.model.has_resolver) {
        long correct = 0, total = 0;
        long B = f.omega.dim(0), n = f.omega.dim(1);
        for (long b = 0; b < B; ++b) {
          if (bt.ss[b]) continue;
          long arg = 0;
          for (long k = 1; k < n; ++k)
            if (f.omega.data()[b * n + k] > f.omega.data()[b * n + arg]) arg = k;
          if (arg == bt.c[b]) ++correct;
          ++total;
        }
        acc = total == 0 ? -1.0
                         : static_cast<double>(correct) / static_cast<double>(total);
      }
      log << json{{"epoch", epoch},
                  {"step", ck.adam.t},
                  {"l_rec", lb.rec},
                  {"l_id", lb.id},
                  {"l_res", lb.res},
                  {"l_total", lb.total_value},
                  {"resolver_acc", acc}}
              .dump()
          << "\n";
      res.last_loss = lb.total_value;
    }
    ck.epoch = epoch + 1;
    double vsim = validate_sim();
    log << json{{"epoch", epoch}, {"val_sim", vsim}}.dump() << "\n";
    if (vsim > ck.best_val || (epoch == start_epoch && ck.best_val == -2.0)) {
      ck.best_val = vsim;
      res.best_val = vsim;
      save_checkpoint(res.best_path, ck);
    }
  }
  save_checkpoint(res.final_path, ck);
  return res;
}

}  // namespace idrt
