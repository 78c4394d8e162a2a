#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace crowdcal {

using ItemId = std::string;
using SourceId = std::string;
using AnnotatorId = std::string;

enum class ItemSet : std::uint8_t { GS, QA };
enum class ResponseMode : std::uint8_t { Binary, Belief };

std::string_view to_string(ItemSet set);
std::string_view to_string(ResponseMode mode);
ItemSet parse_item_set(std::string_view text);
ResponseMode parse_response_mode(std::string_view text);

struct Item {
  ItemId id;
  int true_label = 0;  // 1 = blast (positive), 0 = non-blast
  ItemSet set = ItemSet::QA;
  // Augmented copies (rotations) of one stimulus share a source id.
  SourceId source_id;
};

// Immutable collection of items split into a gold-standard (GS) set and a
// production (QA) set. Prevalences are computed from the final item counts.
class Corpus {
 public:
  Corpus() = default;
  // Validates unique ids and label/set consistency within each source.
  explicit Corpus(std::vector<Item> items);

  std::span<const Item> items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  double qa_prevalence() const { return qa_prevalence_; }
  double gs_prevalence() const { return gs_prevalence_; }

  // Items of one set in corpus order.
  std::vector<const Item*> subset(ItemSet set) const;
  std::size_t count(ItemSet set) const;
  std::size_t count_positive(ItemSet set) const;

  bool contains(std::string_view id) const;
  const Item& at(std::string_view id) const;
  std::size_t index_of(std::string_view id) const;

 private:
  std::vector<Item> items_;
  std::unordered_map<std::string, std::size_t> index_;
  double qa_prevalence_ = 0.0;
  double gs_prevalence_ = 0.0;
};

struct CorpusSpec {
  std::size_t qa_unique_pos = 150;
  std::size_t qa_unique_neg = 150;
  std::size_t gs_unique_pos = 116;
  std::size_t gs_unique_neg = 116;
  // Extra clones per negative source (3 means the original plus 3 rotations).
  std::size_t qa_negative_augmentation = 3;
  std::size_t gs_negative_augmentation = 3;
};

Corpus build_corpus(const CorpusSpec& spec);

void write_corpus_csv(std::ostream& out, const Corpus& corpus);
Corpus read_corpus_csv(std::istream& in);

struct Condition {
  double gs_prevalence = 0.0;
  ResponseMode mode = ResponseMode::Binary;
  friend bool operator==(const Condition&, const Condition&) = default;
};

struct Judgment {
  AnnotatorId annotator_id;
  ItemId item_id;
  ResponseMode mode = ResponseMode::Binary;
  double value = 0.0;  // a bit for Binary, a probability for Belief
  std::uint64_t trial_index = 0;
  bool feedback_shown = false;  // true iff the item is in the GS set
  Condition condition;
  // Copied from the corpus so downstream stages need no corpus lookup.
  ItemSet set = ItemSet::QA;
  int true_label = 0;

  friend bool operator==(const Judgment&, const Judgment&) = default;
};

// Flat judgment list with per-item and per-annotator indices.
class JudgmentTable {
 public:
  JudgmentTable() = default;
  explicit JudgmentTable(std::vector<Judgment> judgments);

  std::span<const Judgment> judgments() const { return judgments_; }
  std::size_t size() const { return judgments_.size(); }
  bool empty() const { return judgments_.empty(); }

  const std::map<ItemId, std::vector<std::size_t>>& by_item() const { return by_item_; }
  const std::map<AnnotatorId, std::vector<std::size_t>>& by_annotator() const {
    return by_annotator_;
  }

  // Judgments on one item, in table order. Empty if the item is unseen.
  std::vector<const Judgment*> for_item(std::string_view item) const;
  std::vector<const Judgment*> for_annotator(std::string_view annotator) const;

  friend bool operator==(const JudgmentTable& a, const JudgmentTable& b) {
    return a.judgments_ == b.judgments_;
  }

 private:
  std::vector<Judgment> judgments_;
  std::map<ItemId, std::vector<std::size_t>> by_item_;
  std::map<AnnotatorId, std::vector<std::size_t>> by_annotator_;
};

struct RowError {
  std::size_t line = 0;
  std::string message;
};

struct IngestResult {
  JudgmentTable table;
  std::vector<RowError> errors;
};

// Parses the judgment CSV. Malformed rows are rejected individually and
// reported with their line numbers; well-formed rows still make the table.
IngestResult ingest_judgments(std::istream& in, const Corpus& corpus);

void write_judgments_csv(std::ostream& out, const JudgmentTable& table);

enum class DedupPolicy : std::uint8_t { None, FirstResponse };

// Keeps only the lowest-trial judgment per (annotator, item, condition), then
// drops annotators left with fewer than min_trials judgments.
JudgmentTable filter_judgments(const JudgmentTable& table, std::size_t min_trials,
                               DedupPolicy dedup = DedupPolicy::FirstResponse);

JudgmentTable concat(std::span<const JudgmentTable> tables);

}  // namespace crowdcal
