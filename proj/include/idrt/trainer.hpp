#pragma once

#include <string>
#include <vector>

#include "idrt/losses.hpp"
#include "idrt/resolver.hpp"
#include "idrt/retracor.hpp"
#include "idrt/synthswap.hpp"

namespace idrt {

struct TrainConfig {
  std::string model = "idretracor";  // idretracor | vu-s | vu-m
  long vus_method = 0;               // training method filter for vu-s
  long epochs = 40;
  long batch_size = 32;
  double lr = 0.003;
  double beta1 = 0.0, beta2 = 0.99, eps_opt = 1e-8;
  LossConfig loss;
  long base_channels = 16;
  double val_fraction = 0.1;
  uint64_t seed = 1;

  void validate() const;
  bool is_idretracor() const { return model == "idretracor"; }
};

// Adam with bias correction. With beta1 = 0 the first moment equals the
// current gradient.
struct Adam {
  double lr = 0.003, beta1 = 0.0, beta2 = 0.99, eps = 1e-8;
  long t = 0;
  std::vector<std::vector<double>> m, v;  // per parameter, same order

  void init(const ParamList& params);
  // reads grads, updates values in place; rejects non-finite gradients
  // naming the offending parameter
  void step(ParamList& params);
};

// Trainable networks: IDRetracor = resolver + mapping-aware retracor; the
// vanilla-UNet baselines use a single kernel group and omega fixed to [1].
struct Model {
  TrainConfig config;
  bool has_resolver = false;
  Resolver resolver;
  Retracor retracor;
  ParamList params;

  ForwardFull forward(const Tensor& images) const;
};

Model build_model(const TrainConfig& cfg, long image_size, long n);

uint64_t params_hash(const ParamList& params);

struct Checkpoint {
  TrainConfig config;
  long epoch = 0;       // completed epochs
  double best_val = -2.0;
  long image_size = 32;
  long n = 4;
  Model model;
  Adam adam;
};

// magic "IDRC" + JSON header + concatenated tensor blobs; round-trips
// bit-exactly
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

struct TrainResult {
  std::string final_path, best_path, log_path;
  double best_val = -2.0;
  double last_loss = 0.0;
};

// Per-epoch sample order and the validation slice are pure functions of the
// seed, so resuming from a checkpoint reproduces the uninterrupted run
// bit-exactly.
TrainResult train(const TrainConfig& cfg, const std::string& dataset_dir,
                  const std::string& out_dir,
                  const std::string& resume_from = "");

}  // namespace idrt
