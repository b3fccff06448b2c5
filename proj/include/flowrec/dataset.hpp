#pragma once

// Interaction-log ingestion, 5-core filtering, per-user sequence assembly,
// leave-one-out splitting, padded batch construction, and the head/tail and
// sequence-length groupings used by the evaluator.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowrec/rng.hpp"

namespace flowrec {

struct Interaction {
  std::string user;
  std::string item;
  int64_t ts = 0;
};

enum class LogFormat { tsv, csv, movielens_dat };

LogFormat parse_log_format(const std::string& s);  // throws on unknown name
std::string to_string(LogFormat f);

struct IngestStats {
  int64_t rows_read = 0;
  int64_t rows_skipped = 0;  // lenient mode only
};

// Reads (user, item, timestamp) records in file order. In strict mode
// (default) a malformed row throws with its line number; in lenient mode it
// is skipped and counted. An empty file returns an empty list with a warning
// on stderr.
std::vector<Interaction> ingest(const std::string& path, LogFormat format,
                                bool strict = true, IngestStats* stats = nullptr);

struct Catalog {
  // Dense ids are 1..n_items in order of first appearance; 0 is the pad id.
  std::vector<std::string> item_names;             // index 0 unused ("" pad)
  std::unordered_map<std::string, int32_t> item_index;
  std::vector<int64_t> popularity;                 // train-only counts, index 0 unused

  int32_t n_items() const { return (int32_t)item_names.size() - 1; }
};

struct FiveCoreResult {
  std::vector<Interaction> interactions;
  int iterations = 0;
  int64_t removed_users = 0;
  int64_t removed_items = 0;
};

// Iterates user/item removal to a fixpoint so every survivor has >= 5
// interactions among the rows kept. Throws "dataset collapsed" if nothing
// survives.
FiveCoreResult five_core_filter(const std::vector<Interaction>& interactions,
                                int min_count = 5);

struct UserSequence {
  int32_t user = 0;                // dense index, 0-based
  std::vector<int32_t> items;      // dense ids, ascending by timestamp
};

struct SequenceCorpus {
  Catalog catalog;                 // popularity not yet filled (train-only; see leave_one_out)
  std::vector<std::string> user_names;  // dense user -> raw id
  std::vector<UserSequence> sequences;  // one per user, user field == position
};

// Assigns dense ids by first appearance in the filtered log and sorts each
// user's items by timestamp (stable on ties).
SequenceCorpus build_sequences(const std::vector<Interaction>& filtered);

struct Split {
  // Per user: the train portion of the sequence (full sequence when the user
  // has no eval targets) plus the two held-out items; 0 marks "no target".
  std::vector<std::vector<int32_t>> train_items;
  std::vector<int32_t> valid_target;
  std::vector<int32_t> test_target;
  int64_t users_total = 0;
  int64_t users_eval = 0;        // sequences long enough for valid+test
  int64_t users_train_only = 0;  // too short; kept for training when possible
  int64_t train_pairs = 0;       // users whose train portion yields a (context, target) pair
};

// Last item -> test, second-to-last -> valid; sequences shorter than 3 stay
// train-only. Also fills catalog popularity from the train portions.
Split leave_one_out(const SequenceCorpus& corpus, Catalog& catalog);

struct Batch {
  int32_t B = 0;
  int32_t L = 0;
  std::vector<int32_t> ids;      // B*L, left-padded with 0
  std::vector<int32_t> lengths;  // real items per row
  std::vector<int32_t> targets;  // dense item ids
  std::vector<int32_t> users;    // dense user index per row
};

enum class Phase { train, valid, test };

// Train phase: one (context, target) pair per user from the train portion
// (every prefix when all_prefix is set), shuffled by the supplied stream.
// Eval phases: deterministic user order, context per the leave-one-out
// protocol (test context includes the validation item).
std::vector<Batch> make_batches(const Split& split, Phase phase, int batch_size,
                                int max_len, RngStream* shuffle,
                                bool all_prefix = false);

struct EvalGroups {
  // Indexed by dense user id; -1 where the user has no eval targets.
  std::vector<int8_t> head;           // 1 head, 0 tail, -1 n/a
  std::vector<int8_t> length_bucket;  // 0 short, 1 middle, 2 long, -1 n/a
  int32_t p25 = 0, p75 = 0;           // context-length bucket boundaries
  std::vector<int32_t> head_items;    // dense ids of head items, ascending
};

// Head items: top max(1, floor(0.2 * n_items)) by train popularity, ties by
// ascending id. A user's label keys on the most recent context item (the
// validation item). Length buckets: nearest-rank 25th/75th percentiles of the
// train-portion lengths of eval users, boundary lengths assigned downward.
EvalGroups compute_groups(const Split& split, const Catalog& catalog);

struct DatasetStats {
  int64_t raw_rows = 0;
  int64_t actions = 0;       // interactions after filtering
  int64_t sequences = 0;     // users after filtering
  int64_t items = 0;
  double avg_length = 0.0;   // actions / sequences
  double sparsity = 0.0;     // 1 - actions / (users * items)
  int five_core_iterations = 0;
};

struct Snapshot {
  Catalog catalog;
  std::vector<std::string> user_names;
  Split split;
  EvalGroups groups;
  DatasetStats stats;
  std::string config_hash;
};

// Full pipeline: ingest -> five_core_filter -> build_sequences ->
// leave_one_out -> compute_groups.
Snapshot preprocess(const std::string& path, LogFormat format, bool strict,
                    const std::string& config_hash);

void save_snapshot(const Snapshot& snap, const std::string& path);
Snapshot load_snapshot(const std::string& path);

}  // namespace flowrec
