#pragma once

// Shared fixtures for the test suite: scratch directories, synthetic corpora,
// tiny models, and a central-difference gradient harness.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <unistd.h>
#include <vector>

#include "flowrec/dataset.hpp"
#include "flowrec/model.hpp"
#include "flowrec/rng.hpp"

namespace testutil {

inline std::string temp_dir(const std::string& tag) {
  static int counter = 0;
  auto dir = std::filesystem::temp_directory_path() /
             ("flowrec_" + tag + "_" + std::to_string(::getpid()) + "_" +
              std::to_string(counter++));
  std::filesystem::create_directories(dir);
  return dir.string();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

// First-order Markov browsing corpus: with probability `coherence` the next
// item is a fixed successor of the current one, otherwise uniform. The
// successor map i -> (7i + 3) mod n has no fixed points for n = 300.
inline std::vector<flowrec::Interaction> markov_interactions(
    int users, int n_items, uint64_t seed, double coherence = 0.7,
    int min_len = 8, int max_len = 24) {
  flowrec::RngStream rng = flowrec::RngStream::from_seed(seed, "markov-corpus");
  std::vector<flowrec::Interaction> rows;
  for (int u = 0; u < users; ++u) {
    const int len = min_len + (int)rng.bounded(max_len - min_len + 1);
    int item = (int)rng.bounded(n_items);
    for (int k = 0; k < len; ++k) {
      rows.push_back({"u" + std::to_string(u), "i" + std::to_string(item),
                      (int64_t)k});
      item = rng.uniform01() < coherence ? (7 * item + 3) % n_items
                                         : (int)rng.bounded(n_items);
    }
  }
  return rows;
}

inline std::string interactions_tsv(const std::vector<flowrec::Interaction>& rows) {
  std::string out;
  for (const auto& r : rows)
    out += r.user + "\t" + r.item + "\t" + std::to_string(r.ts) + "\n";
  return out;
}

// Runs the dataset pipeline in memory (no files involved).
inline flowrec::Snapshot make_snapshot(
    const std::vector<flowrec::Interaction>& rows,
    const std::string& config_hash = "test") {
  flowrec::Snapshot snap;
  auto five = flowrec::five_core_filter(rows);
  auto corpus = flowrec::build_sequences(five.interactions);
  snap.catalog = corpus.catalog;
  snap.user_names = corpus.user_names;
  snap.split = flowrec::leave_one_out(corpus, snap.catalog);
  snap.groups = flowrec::compute_groups(snap.split, snap.catalog);
  snap.stats.sequences = (int64_t)corpus.sequences.size();
  snap.stats.items = snap.catalog.n_items();
  for (const auto& s : corpus.sequences) snap.stats.actions += (int64_t)s.items.size();
  snap.config_hash = config_hash;
  return snap;
}

inline flowrec::Snapshot markov_snapshot(int users, int n_items, uint64_t seed,
                                         double coherence = 0.7) {
  return make_snapshot(markov_interactions(users, n_items, seed, coherence));
}

inline flowrec::ParamStore tiny_model(int n_items, int d, int layers, int heads,
                                      int max_len, uint64_t seed,
                                      bool gru = false,
                                      bool learned_time_proj = false) {
  flowrec::ModelConfig cfg;
  cfg.n_items = n_items;
  cfg.d = d;
  cfg.layers = layers;
  cfg.heads = heads;
  cfg.max_len = max_len;
  cfg.emb_dropout = 0.0;
  cfg.hidden_dropout = 0.0;
  cfg.gru_encoder = gru;
  cfg.learned_time_proj = learned_time_proj;
  flowrec::ParamStore ps = flowrec::ParamStore::build(cfg);
  flowrec::RngStream rng = flowrec::RngStream::from_seed(seed, "init");
  ps.init_params(rng);
  return ps;
}

// Max relative error between the analytic gradient buffer and central finite
// differences of `loss` over every parameter. The denominator guard absorbs
// the ~1e-10 absolute noise floor of central differences at h=1e-5.
inline double gradcheck(flowrec::ParamStore& ps,
                        const std::function<double()>& loss,
                        const std::vector<double>& analytic, double h = 1e-5,
                        double guard = 1e-3) {
  double worst = 0;
  std::vector<double>& val = ps.values();
  for (size_t i = 0; i < val.size(); ++i) {
    const double keep = val[i];
    val[i] = keep + h;
    const double up = loss();
    val[i] = keep - h;
    const double down = loss();
    val[i] = keep;
    const double fd = (up - down) / (2 * h);
    const double denom = std::max({std::fabs(fd), std::fabs(analytic[i]), guard});
    worst = std::max(worst, std::fabs(fd - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace testutil
