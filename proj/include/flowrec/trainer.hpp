#pragma once

// Joint optimization of the prior, CFM, and alignment losses with Adam,
// seeded determinism, early stopping on validation NDCG@10, and resumable
// checkpoints.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "flowrec/dataset.hpp"
#include "flowrec/encoder.hpp"
#include "flowrec/flow.hpp"
#include "flowrec/model.hpp"

namespace flowrec {

struct TrainConfig {
  double alpha = 10.0;  // CFM weight
  double beta = 2.0;    // alignment weight
  double lr = 0.005;
  int batch_size = 512;
  int patience = 10;
  int max_epochs = 200;
  uint64_t seed = 42;
  bool use_prior = true, use_cfm = true, use_align = true;
  bool grad_clip = false;
  double clip_norm = 5.0;
  bool all_prefix = false;
  int eval_steps = 10;   // Euler steps for validation ranking
  int eval_workers = 1;
  ModulationConfig mod;
  bool operator==(const TrainConfig&) const = default;
};

struct LossParts {
  double prior = 0, cfm = 0, align = 0, total = 0;
};

// The per-row random draws of one step, exposed so tests can pin them.
struct StepDraws {
  std::vector<double> t;       // B
  std::vector<double> lambda;  // B x d
};

StepDraws draw_step(int B, int d, const ModulationConfig& mod, RngStream& t_rng,
                    RngStream& mod_rng);

// Forward + backward of the joint objective on one batch; gradients are
// accumulated into ps.grads() (zeroed first). No optimizer update. Throws on
// non-finite losses (naming the component) and when all three losses are
// disabled.
LossParts forward_backward(const Batch& batch, ParamStore& ps,
                           const TrainConfig& tc, const StepDraws& draws,
                           bool train_mode, RngStream* drop_rng);

// forward_backward + one Adam step.
LossParts train_step(const Batch& batch, ParamStore& ps, const TrainConfig& tc,
                     const StepDraws& draws, RngStream* drop_rng);

struct EpochLog {
  int epoch = 0;
  double l_prior = 0, l_cfm = 0, l_align = 0, total = 0;
  double val_hr5 = 0, val_ndcg5 = 0, val_hr10 = 0, val_ndcg10 = 0;
  double seconds = 0;
};

struct TrainResult {
  ParamStore model;  // best-validation parameters
  std::vector<EpochLog> history;
  int best_epoch = -1;
  double best_val_ndcg10 = 0;
  int epochs_run = 0;
};

// Full training loop. When ckpt_path is set, the complete trainer state is
// written there after every epoch (and doubles as the best-model container).
// resume_from restores a previous state and continues identically to an
// uninterrupted run. log (when set) receives one JSON line per epoch.
// config_hash/config_json are embedded verbatim into the checkpoint.
TrainResult train(const Snapshot& snap, const ModelConfig& mc,
                  const TrainConfig& tc, const std::string& ckpt_path = "",
                  const std::string& resume_from = "",
                  std::ostream* log = nullptr,
                  const std::string& config_hash = "",
                  const std::string& config_json = "");

// Checkpoint container ("FRCKPT01"): configs, live + best parameters, Adam
// state, RNG stream states, and training progress.
struct Checkpoint {
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  std::string config_hash;
  std::string config_json;
  std::vector<double> value, adam_m, adam_v, best_value;
  int64_t adam_steps = 0;
  int next_epoch = 0;
  int best_epoch = -1;
  double best_val_ndcg10 = 0;
  int since_best = 0;
  std::array<uint64_t, 4> rng_shuffle{}, rng_t{}, rng_mod{}, rng_drop{};
  std::vector<EpochLog> history;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds a ParamStore holding the checkpoint's best parameters (falls back
// to the live ones for checkpoints saved before any validation pass).
ParamStore load_model(const std::string& path);

}  // namespace flowrec
