#include "flowrec/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "flowrec/io.hpp"

namespace flowrec {

LogFormat parse_log_format(const std::string& s) {
  if (s == "tsv") return LogFormat::tsv;
  if (s == "csv") return LogFormat::csv;
  if (s == "movielens_dat") return LogFormat::movielens_dat;
  throw std::invalid_argument("unknown log format: " + s +
                              " (expected tsv, csv, or movielens_dat)");
}

std::string to_string(LogFormat f) {
  switch (f) {
    case LogFormat::tsv: return "tsv";
    case LogFormat::csv: return "csv";
    case LogFormat::movielens_dat: return "movielens_dat";
  }
  return "?";
}

namespace {

void split_on(const std::string& line, const std::string& delim,
              std::vector<std::string>& out) {
  out.clear();
  size_t pos = 0;
  while (true) {
    size_t next = line.find(delim, pos);
    if (next == std::string::npos) {
      out.push_back(line.substr(pos));
      return;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + delim.size();
  }
}

void split_ws(const std::string& line, std::vector<std::string>& out) {
  out.clear();
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(std::move(tok));
}

bool parse_ts(const std::string& s, int64_t& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

}  // namespace

std::vector<Interaction> ingest(const std::string& path, LogFormat format,
                                bool strict, IngestStats* stats) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open interaction log: " + path);

  std::vector<Interaction> out;
  std::vector<std::string> f;
  std::string line;
  int64_t line_no = 0, skipped = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    int u = 0, i = 1, t = 2;
    switch (format) {
      case LogFormat::tsv:
        split_on(line, "\t", f);
        if (f.size() < 3) split_ws(line, f);
        break;
      case LogFormat::csv:
        split_on(line, ",", f);
        break;
      case LogFormat::movielens_dat:
        split_on(line, "::", f);
        t = 3;  // user::item::rating::timestamp
        break;
    }

    int64_t ts;
    bool ok = (int)f.size() > t && !f[u].empty() && !f[i].empty() &&
              parse_ts(f[t], ts);
    if (!ok) {
      // Tolerate one header line in delimited files.
      if (line_no == 1 && format != LogFormat::movielens_dat &&
          (int)f.size() > t && !parse_ts(f[t], ts)) {
        continue;
      }
      if (strict)
        throw std::runtime_error("malformed row at " + path + ":" +
                                 std::to_string(line_no) + ": " + line);
      ++skipped;
      continue;
    }
    out.push_back({f[u], f[i], ts});
  }
  if (out.empty())
    std::cerr << "warning: no interactions read from " << path << "\n";
  if (stats) {
    stats->rows_read = (int64_t)out.size();
    stats->rows_skipped = skipped;
  }
  return out;
}

FiveCoreResult five_core_filter(const std::vector<Interaction>& interactions,
                                int min_count) {
  if (interactions.empty())
    throw std::invalid_argument("five_core_filter: empty input");

  FiveCoreResult res;
  res.interactions = interactions;
  std::unordered_map<std::string, int64_t> ucount, icount;

  while (true) {
    ++res.iterations;
    ucount.clear();
    icount.clear();
    for (const auto& x : res.interactions) {
      ++ucount[x.user];
      ++icount[x.item];
    }
    bool removed = false;
    std::vector<Interaction> kept;
    kept.reserve(res.interactions.size());
    for (auto& x : res.interactions) {
      if (ucount[x.user] >= min_count && icount[x.item] >= min_count)
        kept.push_back(std::move(x));
      else
        removed = true;
    }
    res.interactions = std::move(kept);
    if (!removed) break;
    if (res.interactions.empty())
      throw std::runtime_error("five_core_filter: dataset collapsed to empty");
  }

  std::unordered_map<std::string, int64_t> u2, i2;
  for (const auto& x : interactions) {
    ++u2[x.user];
    ++i2[x.item];
  }
  std::unordered_map<std::string, bool> useen, iseen;
  for (const auto& x : res.interactions) {
    useen[x.user] = true;
    iseen[x.item] = true;
  }
  res.removed_users = (int64_t)u2.size() - (int64_t)useen.size();
  res.removed_items = (int64_t)i2.size() - (int64_t)iseen.size();
  return res;
}

SequenceCorpus build_sequences(const std::vector<Interaction>& filtered) {
  SequenceCorpus c;
  c.catalog.item_names.push_back("");  // pad slot

  std::unordered_map<std::string, int32_t> user_index;
  struct Ev { int64_t ts; int32_t item; };
  std::vector<std::vector<Ev>> per_user;

  for (const auto& x : filtered) {
    auto [ui, unew] = user_index.try_emplace(x.user, (int32_t)c.user_names.size());
    if (unew) {
      c.user_names.push_back(x.user);
      per_user.emplace_back();
    }
    auto [ii, inew] = c.catalog.item_index.try_emplace(
        x.item, (int32_t)c.catalog.item_names.size());
    if (inew) c.catalog.item_names.push_back(x.item);
    per_user[ui->second].push_back({x.ts, ii->second});
  }

  c.sequences.resize(per_user.size());
  for (size_t u = 0; u < per_user.size(); ++u) {
    auto& evs = per_user[u];
    std::stable_sort(evs.begin(), evs.end(),
                     [](const Ev& a, const Ev& b) { return a.ts < b.ts; });
    c.sequences[u].user = (int32_t)u;
    c.sequences[u].items.reserve(evs.size());
    for (const auto& e : evs) c.sequences[u].items.push_back(e.item);
  }
  c.catalog.popularity.assign(c.catalog.item_names.size(), 0);
  return c;
}

Split leave_one_out(const SequenceCorpus& corpus, Catalog& catalog) {
  Split s;
  s.users_total = (int64_t)corpus.sequences.size();
  s.train_items.resize(corpus.sequences.size());
  s.valid_target.assign(corpus.sequences.size(), 0);
  s.test_target.assign(corpus.sequences.size(), 0);
  catalog.popularity.assign(catalog.item_names.size(), 0);

  for (const auto& seq : corpus.sequences) {
    const auto& it = seq.items;
    auto& train = s.train_items[seq.user];
    if (it.size() >= 3) {
      train.assign(it.begin(), it.end() - 2);
      s.valid_target[seq.user] = it[it.size() - 2];
      s.test_target[seq.user] = it.back();
      ++s.users_eval;
    } else {
      train = it;
      ++s.users_train_only;
    }
    if (train.size() >= 2) ++s.train_pairs;
    for (int32_t id : train) ++catalog.popularity[id];
  }
  return s;
}

namespace {

struct Example {
  int32_t user;
  const int32_t* ctx;
  int32_t ctx_len;
  int32_t target;
};

std::vector<Example> collect_examples(const Split& split, Phase phase,
                                      bool all_prefix) {
  std::vector<Example> ex;
  const int32_t n_users = (int32_t)split.train_items.size();
  for (int32_t u = 0; u < n_users; ++u) {
    const auto& tr = split.train_items[u];
    switch (phase) {
      case Phase::train:
        if (tr.size() < 2) break;
        if (all_prefix) {
          for (size_t j = 1; j < tr.size(); ++j)
            ex.push_back({u, tr.data(), (int32_t)j, tr[j]});
        } else {
          ex.push_back({u, tr.data(), (int32_t)tr.size() - 1, tr.back()});
        }
        break;
      case Phase::valid:
        if (split.valid_target[u] != 0)
          ex.push_back({u, tr.data(), (int32_t)tr.size(), split.valid_target[u]});
        break;
      case Phase::test:
        // Context extended by the validation item; handled at pack time via
        // the extra slot flag below.
        if (split.test_target[u] != 0)
          ex.push_back({u, tr.data(), (int32_t)tr.size(), split.test_target[u]});
        break;
    }
  }
  return ex;
}

}  // namespace

std::vector<Batch> make_batches(const Split& split, Phase phase, int batch_size,
                                int max_len, RngStream* shuffle,
                                bool all_prefix) {
  if (batch_size < 1 || max_len < 1)
    throw std::invalid_argument("make_batches: batch_size and max_len must be >= 1");
  std::vector<Example> ex = collect_examples(split, phase, all_prefix);
  if (phase == Phase::train && shuffle) shuffle->shuffle(ex.begin(), ex.end());

  const bool add_valid = (phase == Phase::test);
  std::vector<Batch> out;
  for (size_t at = 0; at < ex.size(); at += batch_size) {
    const int32_t B = (int32_t)std::min((size_t)batch_size, ex.size() - at);
    Batch b;
    b.B = B;
    b.L = max_len;
    b.ids.assign((size_t)B * max_len, 0);
    b.lengths.resize(B);
    b.targets.resize(B);
    b.users.resize(B);
    for (int32_t r = 0; r < B; ++r) {
      const Example& e = ex[at + r];
      // Assemble the effective context: train portion plus, for the test
      // phase, the held-out validation item.
      int32_t full = e.ctx_len + (add_valid ? 1 : 0);
      int32_t keep = std::min(full, max_len);
      b.lengths[r] = keep;
      b.targets[r] = e.target;
      b.users[r] = e.user;
      int32_t* row = b.ids.data() + (size_t)r * max_len;
      for (int32_t k = 0; k < keep; ++k) {
        // k-th most recent context item, rightmost slot first.
        int32_t from_end = k;  // 0 = most recent
        int32_t v;
        if (add_valid && from_end == 0)
          v = split.valid_target[e.user];
        else
          v = e.ctx[e.ctx_len - 1 - (from_end - (add_valid ? 1 : 0))];
        row[max_len - 1 - k] = v;
      }
    }
    out.push_back(std::move(b));
  }
  return out;
}

EvalGroups compute_groups(const Split& split, const Catalog& catalog) {
  EvalGroups g;
  const int32_t n_users = (int32_t)split.train_items.size();
  const int32_t n_items = catalog.n_items();
  g.head.assign(n_users, -1);
  g.length_bucket.assign(n_users, -1);

  // Head set: top 20% of items by train popularity, ties by ascending id.
  std::vector<int32_t> order(n_items);
  std::iota(order.begin(), order.end(), 1);
  std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
    if (catalog.popularity[a] != catalog.popularity[b])
      return catalog.popularity[a] > catalog.popularity[b];
    return a < b;
  });
  const int32_t n_head = std::max<int32_t>(1, (int32_t)(0.2 * n_items));
  g.head_items.assign(order.begin(), order.begin() + std::min(n_head, n_items));
  std::sort(g.head_items.begin(), g.head_items.end());

  // Length buckets: nearest-rank 25th/75th percentiles of eval users' train
  // context lengths; boundary values fall into the lower bucket.
  std::vector<int32_t> lens;
  for (int32_t u = 0; u < n_users; ++u)
    if (split.test_target[u] != 0)
      lens.push_back((int32_t)split.train_items[u].size());
  if (!lens.empty()) {
    std::vector<int32_t> sorted = lens;
    std::sort(sorted.begin(), sorted.end());
    auto nearest_rank = [&](double p) {
      size_t r = (size_t)std::ceil(p * sorted.size());
      if (r < 1) r = 1;
      return sorted[r - 1];
    };
    g.p25 = nearest_rank(0.25);
    g.p75 = nearest_rank(0.75);
  }

  for (int32_t u = 0; u < n_users; ++u) {
    if (split.test_target[u] == 0) continue;
    // Most recent context item of the test-time sequence = validation item.
    const int32_t recent = split.valid_target[u];
    g.head[u] = std::binary_search(g.head_items.begin(), g.head_items.end(),
                                   recent)
                    ? 1
                    : 0;
    const int32_t len = (int32_t)split.train_items[u].size();
    g.length_bucket[u] = len <= g.p25 ? 0 : (len <= g.p75 ? 1 : 2);
  }
  return g;
}

Snapshot preprocess(const std::string& path, LogFormat format, bool strict,
                    const std::string& cfg_hash) {
  Snapshot snap;
  IngestStats is;
  auto raw = ingest(path, format, strict, &is);
  snap.stats.raw_rows = is.rows_read;
  auto fc = five_core_filter(raw);
  snap.stats.five_core_iterations = fc.iterations;

  SequenceCorpus corpus = build_sequences(fc.interactions);
  snap.catalog = std::move(corpus.catalog);
  snap.user_names = std::move(corpus.user_names);
  snap.split = leave_one_out(corpus, snap.catalog);
  snap.groups = compute_groups(snap.split, snap.catalog);

  snap.stats.actions = (int64_t)fc.interactions.size();
  snap.stats.sequences = (int64_t)snap.user_names.size();
  snap.stats.items = snap.catalog.n_items();
  snap.stats.avg_length =
      snap.stats.sequences ? (double)snap.stats.actions / snap.stats.sequences : 0;
  snap.stats.sparsity =
      snap.stats.sequences && snap.stats.items
          ? 1.0 - (double)snap.stats.actions /
                      ((double)snap.stats.sequences * snap.stats.items)
          : 0;
  snap.config_hash = cfg_hash;
  return snap;
}

static const char kSnapMagic[8] = {'F', 'R', 'S', 'N', 'A', 'P', '0', '1'};

void save_snapshot(const Snapshot& snap, const std::string& path) {
  BinWriter w(path);
  w.magic(kSnapMagic);
  w.str(snap.config_hash);
  w.i64(snap.stats.raw_rows);
  w.i64(snap.stats.actions);
  w.i64(snap.stats.sequences);
  w.i64(snap.stats.items);
  w.f64(snap.stats.avg_length);
  w.f64(snap.stats.sparsity);
  w.i32(snap.stats.five_core_iterations);

  w.u64(snap.catalog.item_names.size());
  for (const auto& s : snap.catalog.item_names) w.str(s);
  w.vec_i64(snap.catalog.popularity);

  w.u64(snap.user_names.size());
  for (const auto& s : snap.user_names) w.str(s);

  w.u64(snap.split.train_items.size());
  for (const auto& v : snap.split.train_items) w.vec_i32(v);
  w.vec_i32(snap.split.valid_target);
  w.vec_i32(snap.split.test_target);
  w.i64(snap.split.users_total);
  w.i64(snap.split.users_eval);
  w.i64(snap.split.users_train_only);
  w.i64(snap.split.train_pairs);

  std::vector<int32_t> head(snap.groups.head.begin(), snap.groups.head.end());
  std::vector<int32_t> bucket(snap.groups.length_bucket.begin(),
                              snap.groups.length_bucket.end());
  w.vec_i32(head);
  w.vec_i32(bucket);
  w.i32(snap.groups.p25);
  w.i32(snap.groups.p75);
  w.vec_i32(snap.groups.head_items);
  w.close();
}

Snapshot load_snapshot(const std::string& path) {
  BinReader r(path);
  r.expect_magic(kSnapMagic, "snapshot");
  Snapshot snap;
  snap.config_hash = r.str("config_hash");
  snap.stats.raw_rows = r.i64("raw_rows");
  snap.stats.actions = r.i64("actions");
  snap.stats.sequences = r.i64("sequences");
  snap.stats.items = r.i64("items");
  snap.stats.avg_length = r.f64("avg_length");
  snap.stats.sparsity = r.f64("sparsity");
  snap.stats.five_core_iterations = r.i32("five_core_iterations");

  uint64_t n = r.u64("item_count");
  snap.catalog.item_names.resize(n);
  for (uint64_t i = 0; i < n; ++i) snap.catalog.item_names[i] = r.str("item_name");
  for (uint64_t i = 1; i < n; ++i)
    snap.catalog.item_index[snap.catalog.item_names[i]] = (int32_t)i;
  snap.catalog.popularity = r.vec_i64("popularity");

  n = r.u64("user_count");
  snap.user_names.resize(n);
  for (uint64_t i = 0; i < n; ++i) snap.user_names[i] = r.str("user_name");

  n = r.u64("train_items_count");
  snap.split.train_items.resize(n);
  for (uint64_t i = 0; i < n; ++i) snap.split.train_items[i] = r.vec_i32("train_items");
  snap.split.valid_target = r.vec_i32("valid_target");
  snap.split.test_target = r.vec_i32("test_target");
  snap.split.users_total = r.i64("users_total");
  snap.split.users_eval = r.i64("users_eval");
  snap.split.users_train_only = r.i64("users_train_only");
  snap.split.train_pairs = r.i64("train_pairs");

  auto head = r.vec_i32("head");
  auto bucket = r.vec_i32("length_bucket");
  snap.groups.head.assign(head.begin(), head.end());
  snap.groups.length_bucket.assign(bucket.begin(), bucket.end());
  snap.groups.p25 = r.i32("p25");
  snap.groups.p75 = r.i32("p75");
  snap.groups.head_items = r.vec_i32("head_items");
  return snap;
}

}  // namespace flowrec
