#include "flowrec/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <ostream>
#include <stdexcept>

#include "flowrec/eval.hpp"
#include "flowrec/io.hpp"
#include "flowrec/kernels.hpp"

namespace flowrec {

StepDraws draw_step(int B, int d, const ModulationConfig& mod, RngStream& t_rng,
                    RngStream& mod_rng) {
  StepDraws s;
  s.t.resize(B);
  for (int b = 0; b < B; ++b) s.t[b] = t_rng.uniform01();
  s.lambda.resize((size_t)B * d);
  for (int b = 0; b < B; ++b)
    sample_modulation(s.lambda.data() + (size_t)b * d, d, mod, mod_rng);
  return s;
}

LossParts forward_backward(const Batch& batch, ParamStore& ps,
                           const TrainConfig& tc, const StepDraws& draws,
                           bool train_mode, RngStream* drop_rng) {
  if (!tc.use_prior && !tc.use_cfm && !tc.use_align)
    throw std::invalid_argument("no active loss: enable at least one of prior/cfm/align");

  const int B = batch.B;
  const int d = ps.cfg().d;
  if ((int)draws.t.size() != B || (int)draws.lambda.size() != B * d)
    throw std::invalid_argument("step draws do not match the batch size");

  ps.zero_grad();
  static thread_local EncoderActs eacts;
  static thread_local FlowActs facts;

  encoder_forward(batch, ps, train_mode, drop_rng, eacts);
  const double* x0 = eacts.x0.data();

  std::vector<double> x1((size_t)B * d);
  kern::gather_rows(x1.data(), ps.p("item_emb"), batch.targets.data(), B, d);

  std::vector<double> xt((size_t)B * d), xmod((size_t)B * d);
  for (int b = 0; b < B; ++b) {
    const size_t at = (size_t)b * d;
    interpolate(xt.data() + at, x0 + at, x1.data() + at, draws.t[b], d);
    apply_modulation(xmod.data() + at, xt.data() + at, draws.lambda.data() + at,
                     d, tc.mod.mode);
  }
  std::vector<double> temb_raw, temb;
  time_features(ps, draws.t.data(), B, temb_raw, temb);
  field_forward(ps, xmod.data(), temb.data(), B, facts);
  const double* v = facts.v.data();

  LossParts parts;
  std::vector<double> probs_prior, probs_align, x1t;
  if (tc.use_prior)
    parts.prior = embedding_xent_forward(x0, batch.targets.data(), B, ps, probs_prior);
  if (tc.use_cfm) parts.cfm = cfm_loss(v, x0, x1.data(), B, d);
  if (tc.use_align) {
    x1t.resize((size_t)B * d);
    for (int b = 0; b < B; ++b) {
      const size_t at = (size_t)b * d;
      single_step_estimate(x1t.data() + at, xt.data() + at, draws.t[b], v + at, d);
    }
    parts.align =
        embedding_xent_forward(x1t.data(), batch.targets.data(), B, ps, probs_align);
  }
  parts.total = (tc.use_prior ? parts.prior : 0.0) +
                (tc.use_cfm ? tc.alpha * parts.cfm : 0.0) +
                (tc.use_align ? tc.beta * parts.align : 0.0);
  if (!std::isfinite(parts.prior))
    throw std::runtime_error("non-finite prior loss");
  if (!std::isfinite(parts.cfm)) throw std::runtime_error("non-finite cfm loss");
  if (!std::isfinite(parts.align))
    throw std::runtime_error("non-finite align loss");

  // Backward. Every path into x0, x1, and v is accumulated before the
  // encoder and the embedding table consume them.
  std::vector<double> dx0((size_t)B * d, 0.0), dx1((size_t)B * d, 0.0);
  std::vector<double> dv((size_t)B * d, 0.0), dxt((size_t)B * d, 0.0);

  if (tc.use_align) {
    std::vector<double> dx1t((size_t)B * d, 0.0);
    embedding_xent_backward(x1t.data(), batch.targets.data(), B, ps,
                            probs_align, tc.beta, dx1t.data());
    for (int b = 0; b < B; ++b) {
      const size_t at = (size_t)b * d;
      const double rem = 1.0 - draws.t[b];
      for (int i = 0; i < d; ++i) {
        dxt[at + i] += dx1t[at + i];
        dv[at + i] += rem * dx1t[at + i];
      }
    }
  }
  if (tc.use_cfm) {
    const double s = 2.0 * tc.alpha / B;
    for (size_t i = 0; i < (size_t)B * d; ++i) {
      const double e = s * (v[i] - x1[i] + x0[i]);
      dv[i] += e;
      dx0[i] += e;
      dx1[i] -= e;
    }
  }

  std::vector<double> dxmod((size_t)B * d, 0.0), dtemb((size_t)B * d, 0.0);
  field_backward(ps, facts, dv.data(), dxmod.data(), dtemb.data());
  time_features_backward(ps, temb_raw, B, dtemb.data());

  if (tc.mod.mode == ModMode::additive) {
    for (size_t i = 0; i < (size_t)B * d; ++i) dxt[i] += dxmod[i];
  } else {
    for (size_t i = 0; i < (size_t)B * d; ++i)
      dxt[i] += draws.lambda[i] * dxmod[i];
  }
  for (int b = 0; b < B; ++b) {
    const size_t at = (size_t)b * d;
    const double t = draws.t[b];
    for (int i = 0; i < d; ++i) {
      dx0[at + i] += (1.0 - t) * dxt[at + i];
      dx1[at + i] += t * dxt[at + i];
    }
  }
  if (tc.use_prior)
    embedding_xent_backward(x0, batch.targets.data(), B, ps, probs_prior, 1.0,
                            dx0.data());
  kern::scatter_add_rows(ps.g("item_emb"), dx1.data(), batch.targets.data(), B, d);
  encoder_backward(batch, ps, eacts, dx0.data());
  return parts;
}

LossParts train_step(const Batch& batch, ParamStore& ps, const TrainConfig& tc,
                     const StepDraws& draws, RngStream* drop_rng) {
  LossParts parts = forward_backward(batch, ps, tc, draws, true, drop_rng);
  if (tc.grad_clip) ps.clip_grad_norm(tc.clip_norm);
  ps.adam_step(tc.lr);
  return parts;
}

namespace {

void log_epoch(std::ostream* log, const EpochLog& e) {
  if (!log) return;
  (*log) << "{\"epoch\":" << e.epoch << ",\"l_prior\":" << e.l_prior
         << ",\"l_cfm\":" << e.l_cfm << ",\"l_align\":" << e.l_align
         << ",\"total\":" << e.total << ",\"val_hr@5\":" << e.val_hr5
         << ",\"val_ndcg@5\":" << e.val_ndcg5 << ",\"val_hr@10\":" << e.val_hr10
         << ",\"val_ndcg@10\":" << e.val_ndcg10 << ",\"seconds\":" << e.seconds
         << "}\n";
  log->flush();
}

}  // namespace

TrainResult train(const Snapshot& snap, const ModelConfig& mc,
                  const TrainConfig& tc, const std::string& ckpt_path,
                  const std::string& resume_from, std::ostream* log,
                  const std::string& config_hash,
                  const std::string& config_json) {
  ModelConfig cfg = mc;
  cfg.n_items = snap.catalog.n_items();
  cfg.gru_encoder = mc.gru_encoder;

  ParamStore ps = ParamStore::build(cfg);
  RngStream shuffle = RngStream::from_seed(tc.seed, "data-shuffle");
  RngStream t_rng = RngStream::from_seed(tc.seed, "t-sampling");
  RngStream mod_rng = RngStream::from_seed(tc.seed, "modulation");
  RngStream drop_rng = RngStream::from_seed(tc.seed, "dropout");

  Checkpoint ck;
  ck.model_cfg = cfg;
  ck.train_cfg = tc;
  ck.config_hash = config_hash;
  ck.config_json = config_json;

  if (!resume_from.empty()) {
    ck = load_checkpoint(resume_from);
    if (!(ck.model_cfg == cfg))
      throw std::runtime_error("incompatible checkpoint: model config differs");
    ps.values() = ck.value;
    ps.adam_m() = ck.adam_m;
    ps.adam_v() = ck.adam_v;
    ps.set_adam_step_count(ck.adam_steps);
    shuffle.set_state(ck.rng_shuffle);
    t_rng.set_state(ck.rng_t);
    mod_rng.set_state(ck.rng_mod);
    drop_rng.set_state(ck.rng_drop);
  } else {
    RngStream init = RngStream::from_seed(tc.seed, "init");
    ps.init_params(init);
    ck.best_value = ps.values();
  }

  TrainResult res;
  res.history = ck.history;
  res.best_epoch = ck.best_epoch;
  res.best_val_ndcg10 = ck.best_val_ndcg10;
  res.epochs_run = ck.next_epoch;
  int since_best = ck.since_best;

  for (int epoch = ck.next_epoch; epoch < tc.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto batches = make_batches(snap.split, Phase::train, tc.batch_size,
                                cfg.max_len, &shuffle, tc.all_prefix);
    double sum_prior = 0, sum_cfm = 0, sum_align = 0, sum_total = 0;
    int64_t n_ex = 0;
    for (const Batch& b : batches) {
      StepDraws draws = draw_step(b.B, cfg.d, tc.mod, t_rng, mod_rng);
      LossParts parts = train_step(b, ps, tc, draws, &drop_rng);
      sum_prior += parts.prior * b.B;
      sum_cfm += parts.cfm * b.B;
      sum_align += parts.align * b.B;
      sum_total += parts.total * b.B;
      n_ex += b.B;
    }

    SamplerConfig sc;
    sc.steps = tc.eval_steps;
    sc.mod = tc.mod;
    auto ranks = rank_users(ps, snap, Phase::valid, sc, tc.eval_workers);
    EvalReport val = aggregate_report(ranks, snap, Phase::valid, sc.steps);

    EpochLog e;
    e.epoch = epoch;
    e.l_prior = n_ex ? sum_prior / n_ex : 0;
    e.l_cfm = n_ex ? sum_cfm / n_ex : 0;
    e.l_align = n_ex ? sum_align / n_ex : 0;
    e.total = n_ex ? sum_total / n_ex : 0;
    e.val_hr5 = val.overall.hr5;
    e.val_ndcg5 = val.overall.ndcg5;
    e.val_hr10 = val.overall.hr10;
    e.val_ndcg10 = val.overall.ndcg10;
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.history.push_back(e);
    log_epoch(log, e);

    if (val.overall.ndcg10 > res.best_val_ndcg10 || res.best_epoch < 0) {
      res.best_val_ndcg10 = val.overall.ndcg10;
      res.best_epoch = epoch;
      ck.best_value = ps.values();
      since_best = 0;
    } else {
      ++since_best;
    }

    if (!ckpt_path.empty()) {
      ck.value = ps.values();
      ck.adam_m = ps.adam_m();
      ck.adam_v = ps.adam_v();
      ck.adam_steps = ps.adam_step_count();
      ck.next_epoch = epoch + 1;
      ck.best_epoch = res.best_epoch;
      ck.best_val_ndcg10 = res.best_val_ndcg10;
      ck.since_best = since_best;
      ck.rng_shuffle = shuffle.state();
      ck.rng_t = t_rng.state();
      ck.rng_mod = mod_rng.state();
      ck.rng_drop = drop_rng.state();
      ck.history = res.history;
      save_checkpoint(ck, ckpt_path);
    }

    res.epochs_run = epoch + 1;
    if (since_best >= tc.patience) break;
  }

  res.model = ParamStore::build(cfg);
  res.model.values() = ck.best_value.empty() ? ps.values() : ck.best_value;
  return res;
}

static const char kCkptMagic[8] = {'F', 'R', 'C', 'K', 'P', 'T', '0', '1'};

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  BinWriter w(path);
  w.magic(kCkptMagic);
  w.str(ck.config_hash);
  w.str(ck.config_json);

  const ModelConfig& m = ck.model_cfg;
  w.i32(m.n_items);
  w.i32(m.d);
  w.i32(m.layers);
  w.i32(m.heads);
  w.i32(m.max_len);
  w.i32(m.flow_hidden);
  w.f64(m.emb_dropout);
  w.f64(m.hidden_dropout);
  w.i32(m.gru_encoder ? 1 : 0);
  w.i32(m.learned_time_proj ? 1 : 0);

  const TrainConfig& t = ck.train_cfg;
  w.f64(t.alpha);
  w.f64(t.beta);
  w.f64(t.lr);
  w.i32(t.batch_size);
  w.i32(t.patience);
  w.i32(t.max_epochs);
  w.u64(t.seed);
  w.i32(t.use_prior ? 1 : 0);
  w.i32(t.use_cfm ? 1 : 0);
  w.i32(t.use_align ? 1 : 0);
  w.i32(t.grad_clip ? 1 : 0);
  w.f64(t.clip_norm);
  w.i32(t.all_prefix ? 1 : 0);
  w.i32(t.eval_steps);
  w.i32(t.eval_workers);
  w.f64(t.mod.delta);
  w.i32((int32_t)t.mod.mode);

  w.vec_f64(ck.value);
  w.vec_f64(ck.adam_m);
  w.vec_f64(ck.adam_v);
  w.vec_f64(ck.best_value);
  w.i64(ck.adam_steps);
  w.i32(ck.next_epoch);
  w.i32(ck.best_epoch);
  w.f64(ck.best_val_ndcg10);
  w.i32(ck.since_best);
  for (auto s : {ck.rng_shuffle, ck.rng_t, ck.rng_mod, ck.rng_drop})
    for (uint64_t x : s) w.u64(x);

  w.u64(ck.history.size());
  for (const EpochLog& e : ck.history) {
    w.i32(e.epoch);
    w.f64(e.l_prior);
    w.f64(e.l_cfm);
    w.f64(e.l_align);
    w.f64(e.total);
    w.f64(e.val_hr5);
    w.f64(e.val_ndcg5);
    w.f64(e.val_hr10);
    w.f64(e.val_ndcg10);
    w.f64(e.seconds);
  }
  w.close();
}

Checkpoint load_checkpoint(const std::string& path) {
  BinReader r(path);
  r.expect_magic(kCkptMagic, "checkpoint");
  Checkpoint ck;
  ck.config_hash = r.str("config_hash");
  ck.config_json = r.str("config_json");

  ModelConfig& m = ck.model_cfg;
  m.n_items = r.i32("n_items");
  m.d = r.i32("d");
  m.layers = r.i32("layers");
  m.heads = r.i32("heads");
  m.max_len = r.i32("max_len");
  m.flow_hidden = r.i32("flow_hidden");
  m.emb_dropout = r.f64("emb_dropout");
  m.hidden_dropout = r.f64("hidden_dropout");
  m.gru_encoder = r.i32("gru_encoder") != 0;
  m.learned_time_proj = r.i32("learned_time_proj") != 0;

  TrainConfig& t = ck.train_cfg;
  t.alpha = r.f64("alpha");
  t.beta = r.f64("beta");
  t.lr = r.f64("lr");
  t.batch_size = r.i32("batch_size");
  t.patience = r.i32("patience");
  t.max_epochs = r.i32("max_epochs");
  t.seed = r.u64("seed");
  t.use_prior = r.i32("use_prior") != 0;
  t.use_cfm = r.i32("use_cfm") != 0;
  t.use_align = r.i32("use_align") != 0;
  t.grad_clip = r.i32("grad_clip") != 0;
  t.clip_norm = r.f64("clip_norm");
  t.all_prefix = r.i32("all_prefix") != 0;
  t.eval_steps = r.i32("eval_steps");
  t.eval_workers = r.i32("eval_workers");
  t.mod.delta = r.f64("mod_delta");
  t.mod.mode = (ModMode)r.i32("mod_mode");

  ck.value = r.vec_f64("value");
  ck.adam_m = r.vec_f64("adam_m");
  ck.adam_v = r.vec_f64("adam_v");
  ck.best_value = r.vec_f64("best_value");
  ck.adam_steps = r.i64("adam_steps");
  ck.next_epoch = r.i32("next_epoch");
  ck.best_epoch = r.i32("best_epoch");
  ck.best_val_ndcg10 = r.f64("best_val_ndcg10");
  ck.since_best = r.i32("since_best");
  for (auto* s : {&ck.rng_shuffle, &ck.rng_t, &ck.rng_mod, &ck.rng_drop})
    for (int i = 0; i < 4; ++i) (*s)[i] = r.u64("rng_state");

  uint64_t n = r.u64("history_size");
  ck.history.resize(n);
  for (EpochLog& e : ck.history) {
    e.epoch = r.i32("epoch");
    e.l_prior = r.f64("l_prior");
    e.l_cfm = r.f64("l_cfm");
    e.l_align = r.f64("l_align");
    e.total = r.f64("total");
    e.val_hr5 = r.f64("val_hr5");
    e.val_ndcg5 = r.f64("val_ndcg5");
    e.val_hr10 = r.f64("val_hr10");
    e.val_ndcg10 = r.f64("val_ndcg10");
    e.seconds = r.f64("seconds");
  }

  const size_t expect = ParamStore::build(ck.model_cfg).n_params();
  if (ck.value.size() != expect || ck.adam_m.size() != expect ||
      ck.adam_v.size() != expect)
    throw std::runtime_error("incompatible checkpoint: parameter count mismatch in " + path);
  return ck;
}

ParamStore load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  ParamStore ps = ParamStore::build(ck.model_cfg);
  ps.values() = ck.best_value.empty() ? ck.value : ck.best_value;
  return ps;
}

}  // namespace flowrec
