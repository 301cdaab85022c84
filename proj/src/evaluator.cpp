#include "idrt/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <cstring>
#include <memory>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace idrt {

using nlohmann::json;

RetraceFn model_retrace_fn(const Model& model) {
  return [&model](const Tensor& images) {
    NoGradGuard ng;
    return model.forward(images).retraced;
  };
}

RetraceFn fake_baseline_fn() {
  return [](const Tensor& images) { return images; };
}

namespace {

SimilaritySummary summarize(const std::vector<double>& v) {
  SimilaritySummary s;
  s.count = static_cast<long>(v.size());
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(v.size()));
  return s;
}

Tensor as_batch1(const Tensor& img) {
  return Tensor({1, img.dim(0), img.dim(1), img.dim(2)},
                std::vector<double>(img.data()));
}

double dot_rows(const Tensor& a, long ra, const Tensor& b, long rb) {
  long d = a.dim(1);
  double s = 0.0;
  for (long j = 0; j < d; ++j) s += a.data()[ra * d + j] * b.data()[rb * d + j];
  return s;
}

constexpr long kEvalBatch = 16;

}  // namespace

Evaluator::Evaluator(const std::string& dataset_dir, const EvalConfig& cfg)
    : dir_(dataset_dir),
      cfg_(cfg),
      man_(load_manifest(dataset_dir + "/manifest.json")),
      family_(family_from_manifest(man_)),
      emb_a_(standard_embedder(cfg.embedder_seed_a, man_.config.m,
                               man_.config.image_size)),
      emb_b_(standard_embedder(cfg.embedder_seed_b, man_.config.m,
                               man_.config.image_size)) {}

std::vector<long> Evaluator::split_records(const std::string& split,
                                           bool fakes_only) const {
  std::vector<long> out;
  std::map<long, long> per_method;
  for (long i = 0; i < static_cast<long>(man_.records.size()); ++i) {
    const SampleRecord& r = man_.records[i];
    if (r.split != split) continue;
    if (fakes_only && r.kind != "target-fake") continue;
    if (fakes_only && cfg_.max_pairs_per_method > 0 &&
        per_method[r.c] >= cfg_.max_pairs_per_method)
      continue;
    if (fakes_only) ++per_method[r.c];
    out.push_back(i);
  }
  return out;
}

IdSimilarity Evaluator::id_similarity(const RetraceFn& retrace,
                                      const std::string& split) const {
  std::vector<long> idx = split_records(split, true);
  if (idx.empty())
    throw std::invalid_argument("id_similarity: split '" + split + "' is empty");
  NoGradGuard ng;
  IdSimilarity out;
  long S = man_.config.image_size;
  std::map<long, std::vector<double>> pm_a, pm_b;
  for (size_t off = 0; off < idx.size(); off += kEvalBatch) {
    size_t hi = std::min(off + kEvalBatch, idx.size());
    long B = static_cast<long>(hi - off);
    std::vector<double> in(B * 3 * S * S), tg(B * 3 * S * S);
    for (long b = 0; b < B; ++b) {
      auto [x, y] = load_pair(dir_, man_.records[idx[off + b]]);
      std::copy(x.data().begin(), x.data().end(), in.begin() + b * 3 * S * S);
      std::copy(y.data().begin(), y.data().end(), tg.begin() + b * 3 * S * S);
    }
    Tensor input({B, 3, S, S}, std::move(in));
    Tensor target({B, 3, S, S}, std::move(tg));
    Tensor r = retrace(input);
    Tensor va = emb_a_.embed(r), ta = emb_a_.embed(target);
    Tensor vb = emb_b_.embed(r), tb = emb_b_.embed(target);
    for (long b = 0; b < B; ++b) {
      long c = man_.records[idx[off + b]].c;
      double sa = dot_rows(va, b, ta, b), sb = dot_rows(vb, b, tb, b);
      out.sims_a.push_back(sa);
      out.sims_b.push_back(sb);
      out.method.push_back(c);
      pm_a[c].push_back(sa);
      pm_b[c].push_back(sb);
    }
  }
  out.overall_a = summarize(out.sims_a);
  out.overall_b = summarize(out.sims_b);
  for (auto& [c, v] : pm_a) out.per_method_a[c] = summarize(v);
  for (auto& [c, v] : pm_b) out.per_method_b[c] = summarize(v);
  return out;
}

namespace {

struct Gallery {
  std::vector<uint64_t> ids;
  Tensor embeddings;  // [G, d]
};

Gallery build_gallery(const DatasetManifest& man, const Embedder& emb,
                      const std::string& split, long G) {
  auto it = man.id_registry.find(split);
  if (it == man.id_registry.end() || it->second.empty())
    throw std::invalid_argument("id_retrieval: no identity registry for split '" +
                                split + "'");
  std::vector<uint64_t> ids = it->second;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw std::invalid_argument("id_retrieval: duplicate identities in gallery");
  if (static_cast<long>(ids.size()) < G)
    throw std::invalid_argument("id_retrieval: only " +
                                std::to_string(ids.size()) +
                                " distinct identities available, need " +
                                std::to_string(G));
  ids.resize(G);
  long S = man.config.image_size;
  std::vector<double> data(G * 3 * S * S);
  for (long g = 0; g < G; ++g) {
    Tensor img = render_face(IdentitySpec::from_seed(ids[g], man.config.m),
                             Attr::canonical(), S);
    std::copy(img.data().begin(), img.data().end(), data.begin() + g * 3 * S * S);
  }
  NoGradGuard ng;
  Gallery gal;
  gal.ids = std::move(ids);
  gal.embeddings = emb.embed(Tensor({G, 3, S, S}, std::move(data)));
  return gal;
}

// rank of the true target among gallery rows; ties to the lowest index
long rank_of(const Tensor& gal, const std::vector<double>& q, long truth) {
  long G = gal.dim(0), d = gal.dim(1);
  double truth_sim = 0.0;
  std::vector<double> sims(G);
  for (long g = 0; g < G; ++g) {
    double s = 0.0;
    for (long j = 0; j < d; ++j) s += gal.data()[g * d + j] * q[j];
    sims[g] = s;
    if (g == truth) truth_sim = s;
  }
  long rank = 0;
  for (long g = 0; g < G; ++g) {
    if (g == truth) continue;
    if (sims[g] > truth_sim || (sims[g] == truth_sim && g < truth)) ++rank;
  }
  return rank;
}

}  // namespace

Retrieval Evaluator::id_retrieval(const RetraceFn& retrace,
                                  const std::string& split,
                                  long gallery_size) const {
  std::vector<long> idx = split_records(split, true);
  if (idx.empty())
    throw std::invalid_argument("id_retrieval: split '" + split + "' is empty");
  Gallery gal = build_gallery(man_, emb_a_, split, gallery_size);
  std::map<uint64_t, long> id_pos;
  for (long g = 0; g < static_cast<long>(gal.ids.size()); ++g)
    id_pos[gal.ids[g]] = g;

  NoGradGuard ng;
  long S = man_.config.image_size, d = emb_a_.dim();
  Retrieval out;
  std::map<long, std::array<long, 3>> pm;  // c -> {t1, t5, count}
  for (size_t off = 0; off < idx.size(); off += kEvalBatch) {
    size_t hi = std::min(off + kEvalBatch, idx.size());
    long B = static_cast<long>(hi - off);
    std::vector<double> in(B * 3 * S * S);
    for (long b = 0; b < B; ++b) {
      auto [x, y] = load_pair(dir_, man_.records[idx[off + b]]);
      std::copy(x.data().begin(), x.data().end(), in.begin() + b * 3 * S * S);
    }
    Tensor r = retrace(Tensor({B, 3, S, S}, std::move(in)));
    Tensor vr = emb_a_.embed(r);
    for (long b = 0; b < B; ++b) {
      const SampleRecord& rec = man_.records[idx[off + b]];
      auto pos = id_pos.find(rec.target_seed);
      if (pos == id_pos.end()) continue;  // target outside the gallery subset
      std::vector<double> q(vr.data().begin() + b * d,
                            vr.data().begin() + (b + 1) * d);
      long rank = rank_of(gal.embeddings, q, pos->second);
      auto& s = pm[rec.c];
      if (rank < 1) ++s[0];
      if (rank < 5) ++s[1];
      ++s[2];
    }
  }
  long t1 = 0, t5 = 0, total = 0;
  for (auto& [c, s] : pm) {
    out.per_method[c] = {100.0 * s[0] / std::max<long>(s[2], 1),
                         100.0 * s[1] / std::max<long>(s[2], 1)};
    t1 += s[0];
    t5 += s[1];
    total += s[2];
  }
  if (total == 0)
    throw std::runtime_error("id_retrieval: no query targets present in gallery");
  out.t1 = 100.0 * static_cast<double>(t1) / static_cast<double>(total);
  out.t5 = 100.0 * static_cast<double>(t5) / static_cast<double>(total);
  out.queries = total;
  return out;
}

ChanceLevel Evaluator::retrieval_chance(long G) const {
  Rng rng(derive_seed(cfg_.seed, 0x6d632d63ULL));
  long d = emb_a_.dim();
  long t1 = 0, t5 = 0;
  auto unit = [&] {
    std::vector<double> v(d);
    double n = 0.0;
    for (double& x : v) {
      x = rng.normal();
      n += x * x;
    }
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
  };
  for (long t = 0; t < cfg_.mc_trials; ++t) {
    std::vector<double> q = unit();
    double truth_sim = 0.0;
    std::vector<double> sims(G);
    for (long g = 0; g < G; ++g) {
      std::vector<double> e = unit();
      double s = 0.0;
      for (long j = 0; j < d; ++j) s += q[j] * e[j];
      sims[g] = s;
    }
    truth_sim = sims[0];
    long rank = 0;
    for (long g = 1; g < G; ++g)
      if (sims[g] > truth_sim) ++rank;
    if (rank < 1) ++t1;
    if (rank < 5) ++t5;
  }
  return {100.0 * t1 / static_cast<double>(cfg_.mc_trials),
          100.0 * t5 / static_cast<double>(cfg_.mc_trials)};
}

std::map<long, Histogram> Evaluator::similarity_distribution(
    const RetraceFn& retrace, const std::string& split) const {
  std::vector<long> idx = split_records(split, true);
  if (idx.empty())
    throw std::invalid_argument("similarity_distribution: split '" + split +
                                "' is empty");
  long bins = cfg_.hist_bins;
  std::map<long, Histogram> out;
  auto ensure = [&](long c) -> Histogram& {
    Histogram& h = out[c];
    if (h.edges.empty()) {
      h.edges.resize(bins + 1);
      for (long i = 0; i <= bins; ++i)
        h.edges[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(bins);
      h.fake.assign(bins, 0);
      h.retraced.assign(bins, 0);
      h.real.assign(bins, 0);
    }
    return h;
  };
  auto bin_of = [&](double s) {
    long b = static_cast<long>(std::floor((s + 1.0) / 2.0 * static_cast<double>(bins)));
    return std::clamp<long>(b, 0, bins - 1);
  };
  NoGradGuard ng;
  long S = man_.config.image_size;
  Rng attr_rng(derive_seed(cfg_.seed, 0x72656131ULL));
  for (size_t off = 0; off < idx.size(); off += kEvalBatch) {
    size_t hi = std::min(off + kEvalBatch, idx.size());
    long B = static_cast<long>(hi - off);
    std::vector<double> in(B * 3 * S * S), tg(B * 3 * S * S);
    for (long b = 0; b < B; ++b) {
      auto [x, y] = load_pair(dir_, man_.records[idx[off + b]]);
      std::copy(x.data().begin(), x.data().end(), in.begin() + b * 3 * S * S);
      std::copy(y.data().begin(), y.data().end(), tg.begin() + b * 3 * S * S);
    }
    Tensor input({B, 3, S, S}, std::vector<double>(in));
    Tensor target({B, 3, S, S}, std::move(tg));
    Tensor r = retrace(input);
    Tensor vf = emb_a_.embed(input), vt = emb_a_.embed(target),
           vr = emb_a_.embed(r);
    for (long b = 0; b < B; ++b) {
      const SampleRecord& rec = man_.records[idx[off + b]];
      Histogram& h = ensure(rec.c);
      ++h.fake[bin_of(dot_rows(vf, b, vt, b))];
      ++h.retraced[bin_of(dot_rows(vr, b, vt, b))];
      // real-vs-real reference: the same identity under two fresh attributes
      IdentitySpec id = IdentitySpec::from_seed(rec.target_seed, man_.config.m);
      Tensor r1 = as_batch1(render_face(id, attr_rng.next_u64(), S));
      Tensor r2 = as_batch1(render_face(id, attr_rng.next_u64(), S));
      Tensor e1 = emb_a_.embed(r1), e2 = emb_a_.embed(r2);
      ++h.real[bin_of(dot_rows(e1, 0, e2, 0))];
    }
  }
  return out;
}

void Evaluator::write_histograms(const std::map<long, Histogram>& hists,
                                 const std::string& dir,
                                 const std::string& stem) const {
  for (const auto& [c, h] : hists) {
    std::string path = dir + "/" + stem + "_method" + std::to_string(c) + ".csv";
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write histogram: " + path);
    os << "bin_lo,bin_hi,fake,retraced,real\n";
    for (size_t i = 0; i + 1 < h.edges.size(); ++i)
      os << h.edges[i] << "," << h.edges[i + 1] << "," << h.fake[i] << ","
         << h.retraced[i] << "," << h.real[i] << "\n";
  }
}

Preservation Evaluator::real_face_preservation(const RetraceFn& retrace,
                                               const ResolveFn* resolve) const {
  std::vector<long> ss;
  for (long i = 0; i < static_cast<long>(man_.records.size()); ++i)
    if (man_.records[i].split == "test-unseen" &&
        man_.records[i].kind == "source-source")
      ss.push_back(i);
  if (ss.empty())
    throw std::invalid_argument("real_face_preservation: no held-out source faces");
  NoGradGuard ng;
  long S = man_.config.image_size;
  Preservation out;
  auto entropy_of = [](const Tensor& omega) {
    long B = omega.dim(0), n = omega.dim(1);
    double h = 0.0;
    for (long b = 0; b < B; ++b)
      for (long k = 0; k < n; ++k) {
        double w = omega.data()[b * n + k];
        if (w > 0.0) h -= w * std::log(w);
      }
    return h / static_cast<double>(B);
  };
  std::vector<double> in(ss.size() * 3 * S * S);
  for (size_t b = 0; b < ss.size(); ++b) {
    auto [x, y] = load_pair(dir_, man_.records[ss[b]]);
    std::copy(x.data().begin(), x.data().end(), in.begin() + b * 3 * S * S);
  }
  Tensor input({static_cast<long>(ss.size()), 3, S, S}, std::move(in));
  Tensor r = retrace(input);
  Tensor vi = emb_a_.embed(input), vo = emb_a_.embed(r);
  for (size_t b = 0; b < ss.size(); ++b)
    out.sims.push_back(dot_rows(vo, static_cast<long>(b), vi, static_cast<long>(b)));
  out.summary = summarize(out.sims);
  if (resolve) {
    out.omega_entropy_real = entropy_of((*resolve)(input));
    std::vector<long> fakes = split_records("test-unseen", true);
    long take = std::min<long>(static_cast<long>(fakes.size()), 64);
    std::vector<double> fin(take * 3 * S * S);
    for (long b = 0; b < take; ++b) {
      auto [x, y] = load_pair(dir_, man_.records[fakes[b]]);
      std::copy(x.data().begin(), x.data().end(), fin.begin() + b * 3 * S * S);
    }
    out.omega_entropy_fake =
        entropy_of((*resolve)(Tensor({take, 3, S, S}, std::move(fin))));
  }
  return out;
}

std::map<long, double> Evaluator::semantic_consistency(
    const RetraceFn& retrace, const std::string& split) const {
  std::vector<long> idx = split_records(split, true);
  if (idx.empty())
    throw std::invalid_argument("semantic_consistency: split '" + split +
                                "' is empty");
  NoGradGuard ng;
  long S = man_.config.image_size;
  IdentitySpec source = IdentitySpec::from_seed(man_.source_seed, man_.config.m);
  std::map<long, std::vector<double>> per;
  std::map<long, long> taken;
  for (long i : idx) {
    const SampleRecord& rec = man_.records[i];
    if (taken[rec.c] >= cfg_.semantic_samples_per_method) continue;
    ++taken[rec.c];
    auto [fake1, target] = load_pair(dir_, rec);
    Tensor r = retrace(as_batch1(fake1));
    Tensor single({3, S, S},
                  std::vector<double>(r.data().begin(), r.data().end()));
    SwapFamily::IdentityEstimate est = family_.estimate_identity(single);
    IdentitySpec zhat;
    zhat.z = est.z;
    Tensor fake2 = family_.swap(source, Attr::canonical(), zhat, est.attr, rec.c);
    double s = emb_a_.similarity(fake1, fake2);
    per[rec.c].push_back(s);
  }
  std::map<long, double> out;
  for (auto& [c, v] : per) out[c] = summarize(v).mean;
  return out;
}

RetraceFn Evaluator::oracle_retrace_fn(const std::string& split) const {
  // The oracle holds crafting privileges (method index and attribute seed per
  // record), so it matches inputs to records by content rather than taking
  // them as arguments.
  std::vector<long> idx = split_records(split, true);
  // content key -> record index, loaded once (first pixels identify a fake
  // with probability 1; a full comparison confirms)
  auto key_of = [](const std::vector<double>& v) {
    uint64_t h = 1469598103934665603ULL;
    for (int i = 0; i < 8; ++i) {
      uint64_t bits;
      std::memcpy(&bits, &v[i], sizeof bits);
      h = (h ^ bits) * 1099511628211ULL;
    }
    return h;
  };
  auto lookup = std::make_shared<std::multimap<uint64_t, long>>();
  for (long i : idx) {
    auto [x, y] = load_pair(dir_, man_.records[i]);
    lookup->emplace(key_of(x.data()), i);
  }
  auto self = this;
  return [self, lookup, key_of](const Tensor& images) {
    long S = self->man_.config.image_size;
    long B = images.dim(0), sz = 3 * S * S;
    IdentitySpec source =
        IdentitySpec::from_seed(self->man_.source_seed, self->man_.config.m);
    std::vector<double> out(B * sz);
    for (long b = 0; b < B; ++b) {
      Tensor fake({3, S, S},
                  std::vector<double>(images.data().begin() + b * sz,
                                      images.data().begin() + (b + 1) * sz));
      const SampleRecord* found = nullptr;
      auto [lo, hi_it] = lookup->equal_range(key_of(fake.data()));
      for (auto it = lo; it != hi_it; ++it) {
        auto [x, y] = load_pair(self->dir_, self->man_.records[it->second]);
        if (x.data() == fake.data()) {
          found = &self->man_.records[it->second];
          break;
        }
      }
      if (!found)
        throw std::runtime_error("oracle: input image is not a crafted fake");
      Tensor base =
          render_face(source, Attr::from_seed(found->attr_seed), S);
      std::vector<double> zhat = self->family_.oracle_decode(fake, found->c, base);
      IdentitySpec est;
      est.z = zhat;
      Tensor rec_img = render_face(est, Attr::canonical(), S);
      std::copy(rec_img.data().begin(), rec_img.data().end(),
                out.begin() + b * sz);
    }
    return Tensor({B, 3, S, S}, std::move(out));
  };
}

std::vector<AblationPoint> ablate(const std::string& parameter,
                                  const std::vector<double>& values,
                                  const TrainConfig& base,
                                  const std::string& dataset_dir,
                                  const std::string& out_dir,
                                  const EvalConfig& ecfg) {
  if (parameter != "theta" && parameter != "alpha")
    throw std::invalid_argument("ablate: parameter must be theta or alpha");
  std::vector<AblationPoint> curve;
  for (double v : values) {
    TrainConfig cfg = base;
    if (parameter == "theta") {
      if (!(v > 0.0 && v <= 1.0))
        throw std::invalid_argument("ablate: theta values must be in (0,1]");
      cfg.loss.theta = v;
    } else {
      if (v < 0.0) throw std::invalid_argument("ablate: alpha must be >= 0");
      cfg.loss.alpha = v;
    }
    std::string run_dir = out_dir + "/" + parameter + "_" + std::to_string(v);
    TrainResult tr = train(cfg, dataset_dir, run_dir);
    Checkpoint ck = load_checkpoint(tr.best_path);
    Evaluator ev(dataset_dir, ecfg);
    IdSimilarity sim = ev.id_similarity(model_retrace_fn(ck.model), ecfg.split);
    curve.push_back({v, sim.overall_a.mean, sim.overall_b.mean});
  }
  return curve;
}

void write_ablation_csv(const std::vector<AblationPoint>& curve,
                        const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write ablation csv: " + path);
  os << "value,score_a,score_b\n";
  for (const auto& p : curve)
    os << p.value << "," << p.score_a << "," << p.score_b << "\n";
}

namespace {

json summary_json(const SimilaritySummary& s) {
  return json{{"mean", s.mean}, {"stddev", s.stddev}, {"count", s.count}};
}

json similarity_json(const IdSimilarity& s) {
  json pm = json::object();
  for (const auto& [c, sum] : s.per_method_a)
    pm[std::to_string(c)] = json{{"a", summary_json(sum)},
                                 {"b", summary_json(s.per_method_b.at(c))}};
  return json{{"overall_a", summary_json(s.overall_a)},
              {"overall_b", summary_json(s.overall_b)},
              {"per_method", std::move(pm)}};
}

json retrieval_json(const Retrieval& r) {
  json pm = json::object();
  for (const auto& [c, tt] : r.per_method)
    pm[std::to_string(c)] = json{{"t1", tt.first}, {"t5", tt.second}};
  return json{{"t1", r.t1}, {"t5", r.t5}, {"queries", r.queries},
              {"per_method", std::move(pm)}};
}

}  // namespace

void write_report(const std::string& path, const Evaluator& ev,
                  const Model& model, uint64_t checkpoint_hash) {
  const EvalConfig& cfg = ev.config();
  RetraceFn retrace = model_retrace_fn(model);
  json j;
  j["version"] = 1;
  j["tau"] = ev.tau();
  j["embedder_seeds"] = {cfg.embedder_seed_a, cfg.embedder_seed_b};
  j["embedder_checksums"] = {ev.embedder_a().checksum(),
                             ev.embedder_b().checksum()};
  j["checkpoint_hash"] = checkpoint_hash;
  j["gallery_size"] = cfg.gallery_size;
  ChanceLevel chance = ev.retrieval_chance(cfg.gallery_size);
  j["retrieval_chance"] = json{{"t1", chance.t1}, {"t5", chance.t5}};

  json splits = json::object();
  for (const char* split : {"test-unseen", "test-seen-TI", "test-seen-SF"}) {
    bool has = false;
    for (const auto& r : ev.manifest().records)
      if (r.split == split && r.kind == "target-fake") {
        has = true;
        break;
      }
    if (!has) {
      splits[split] = json{{"warning", "split empty, omitted"}};
      continue;
    }
    json s;
    s["similarity"] = similarity_json(ev.id_similarity(retrace, split));
    // seen splits may hold fewer distinct identities than the configured
    // gallery; clamp and record the size actually used
    long avail = static_cast<long>(ev.manifest().id_registry.at(split).size());
    long g = std::min(cfg.gallery_size, avail);
    s["gallery_size"] = g;
    s["retrieval"] = retrieval_json(ev.id_retrieval(retrace, split, g));
    splits[split] = std::move(s);
  }
  j["splits"] = std::move(splits);

  j["fake_baseline"] = json{
      {"similarity",
       similarity_json(ev.id_similarity(fake_baseline_fn(), cfg.split))},
      {"retrieval", retrieval_json(ev.id_retrieval(fake_baseline_fn(), cfg.split,
                                                   cfg.gallery_size))}};

  ResolveFn resolve;
  if (model.has_resolver) {
    resolve = [&model](const Tensor& images) {
      NoGradGuard ng;
      return model.resolver.resolve(images);
    };
  }
  Preservation pres =
      ev.real_face_preservation(retrace, model.has_resolver ? &resolve : nullptr);
  j["real_face_preservation"] = json{{"summary", summary_json(pres.summary)},
                                     {"omega_entropy_real", pres.omega_entropy_real},
                                     {"omega_entropy_fake", pres.omega_entropy_fake}};

  json mas = json::object();
  for (const auto& [c, v] : ev.semantic_consistency(retrace, cfg.split))
    mas[std::to_string(c)] = v;
  j["semantic_consistency_mas"] = std::move(mas);

  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write report: " + path);
  os << j.dump(1) << "\n";
}

}  // namespace idrt
