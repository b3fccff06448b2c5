#include "flowrec/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "flowrec/rng.hpp"

namespace flowrec {

RunConfig default_config() { return RunConfig{}; }

nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["data"] = {{"path", c.data_path},
               {"format", to_string(c.data_format)},
               {"strict", c.data_strict},
               {"snapshot", c.snapshot_path}};
  j["model"] = {{"d", c.model.d},
                {"layers", c.model.layers},
                {"heads", c.model.heads},
                {"max_len", c.model.max_len},
                {"flow_hidden", c.model.flow_hidden},
                {"emb_dropout", c.model.emb_dropout},
                {"hidden_dropout", c.model.hidden_dropout},
                {"encoder", c.model.gru_encoder ? "gru" : "transformer"},
                {"learned_time_proj", c.model.learned_time_proj}};
  j["train"] = {{"alpha", c.train.alpha},
                {"beta", c.train.beta},
                {"lr", c.train.lr},
                {"batch_size", c.train.batch_size},
                {"patience", c.train.patience},
                {"max_epochs", c.train.max_epochs},
                {"use_prior", c.train.use_prior},
                {"use_cfm", c.train.use_cfm},
                {"use_align", c.train.use_align},
                {"grad_clip", c.train.grad_clip},
                {"clip_norm", c.train.clip_norm},
                {"all_prefix", c.train.all_prefix},
                {"eval_steps", c.train.eval_steps},
                {"modulation",
                 {{"delta", c.train.mod.delta},
                  {"mode", to_string(c.train.mod.mode)}}}};
  j["sampler"] = {{"steps", c.sampler.steps},
                  {"mask_history", c.sampler.mask_history}};
  j["eval"] = {{"workers", c.eval_workers}, {"sweep_grid", c.sweep_grid}};
  return j;
}

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& keys,
                    const std::string& where) {
  if (!j.is_object())
    throw std::invalid_argument("config: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!keys.count(it.key()))
      throw std::invalid_argument("config: unknown key \"" + it.key() +
                                  "\" in " + where);
}

template <typename T>
void take(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  reject_unknown(j, {"seed", "out_dir", "data", "model", "train", "sampler", "eval"},
                 "the top level");
  take(j, "seed", c.seed);
  take(j, "out_dir", c.out_dir);

  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown(d, {"path", "format", "strict", "snapshot"}, "data");
    take(d, "path", c.data_path);
    if (d.contains("format"))
      c.data_format = parse_log_format(d.at("format").get<std::string>());
    take(d, "strict", c.data_strict);
    take(d, "snapshot", c.snapshot_path);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown(m,
                   {"d", "layers", "heads", "max_len", "flow_hidden",
                    "emb_dropout", "hidden_dropout", "encoder",
                    "learned_time_proj"},
                   "model");
    take(m, "d", c.model.d);
    take(m, "layers", c.model.layers);
    take(m, "heads", c.model.heads);
    take(m, "max_len", c.model.max_len);
    take(m, "flow_hidden", c.model.flow_hidden);
    take(m, "emb_dropout", c.model.emb_dropout);
    take(m, "hidden_dropout", c.model.hidden_dropout);
    if (m.contains("encoder")) {
      const std::string enc = m.at("encoder").get<std::string>();
      if (enc == "gru") c.model.gru_encoder = true;
      else if (enc == "transformer") c.model.gru_encoder = false;
      else throw std::invalid_argument("config: encoder must be transformer or gru");
    }
    take(m, "learned_time_proj", c.model.learned_time_proj);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    reject_unknown(t,
                   {"alpha", "beta", "lr", "batch_size", "patience",
                    "max_epochs", "use_prior", "use_cfm", "use_align",
                    "grad_clip", "clip_norm", "all_prefix", "eval_steps",
                    "modulation"},
                   "train");
    take(t, "alpha", c.train.alpha);
    take(t, "beta", c.train.beta);
    take(t, "lr", c.train.lr);
    take(t, "batch_size", c.train.batch_size);
    take(t, "patience", c.train.patience);
    take(t, "max_epochs", c.train.max_epochs);
    take(t, "use_prior", c.train.use_prior);
    take(t, "use_cfm", c.train.use_cfm);
    take(t, "use_align", c.train.use_align);
    take(t, "grad_clip", c.train.grad_clip);
    take(t, "clip_norm", c.train.clip_norm);
    take(t, "all_prefix", c.train.all_prefix);
    take(t, "eval_steps", c.train.eval_steps);
    if (t.contains("modulation")) {
      const auto& mo = t.at("modulation");
      reject_unknown(mo, {"delta", "mode"}, "train.modulation");
      take(mo, "delta", c.train.mod.delta);
      if (mo.contains("mode"))
        c.train.mod.mode = parse_mod_mode(mo.at("mode").get<std::string>());
    }
  }
  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    reject_unknown(s, {"steps", "mask_history"}, "sampler");
    take(s, "steps", c.sampler.steps);
    take(s, "mask_history", c.sampler.mask_history);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    reject_unknown(e, {"workers", "sweep_grid"}, "eval");
    take(e, "workers", c.eval_workers);
    take(e, "sweep_grid", c.sweep_grid);
  }

  if (c.train.alpha < 0 || c.train.beta < 0)
    throw std::invalid_argument("config: alpha and beta must be >= 0");
  if (c.train.lr <= 0) throw std::invalid_argument("config: lr must be positive");
  if (c.train.batch_size < 1 || c.model.max_len < 1)
    throw std::invalid_argument("config: batch_size and max_len must be >= 1");
  if (c.sampler.steps < 1)
    throw std::invalid_argument("config: sampler.steps must be >= 1");
  if (c.model.d < 1 || c.model.layers < 1 || c.model.heads < 1 ||
      c.model.d % c.model.heads != 0)
    throw std::invalid_argument("config: model dims invalid (d must divide by heads)");
  if (c.train.mod.mode != ModMode::off && c.train.mod.delta <= 0)
    throw std::invalid_argument("config: modulation delta must be positive");
  for (int g : c.sweep_grid)
    if (g < 1) throw std::invalid_argument("config: sweep grid entries must be >= 1");

  // Inference applies the same modulation family deterministically at its
  // distribution mean, so the sampler inherits the training setting.
  c.sampler.mod = c.train.mod;
  c.train.eval_workers = c.eval_workers;
  return c;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::invalid_argument("config: invalid JSON in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const RunConfig& c) {
  // Canonical dump: nlohmann::json orders keys, so equal configs hash equal.
  const std::string dump = config_to_json(c).dump();
  const uint64_t h = fnv1a(dump);
  std::ostringstream ss;
  ss << std::hex << h;
  return ss.str();
}

}  // namespace flowrec
