#include "crowdcal/core.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <ostream>
#include <set>
#include <tuple>

#include "crowdcal/csv.hpp"
#include "crowdcal/error.hpp"

namespace crowdcal {

std::string_view to_string(ItemSet set) { return set == ItemSet::GS ? "GS" : "QA"; }

std::string_view to_string(ResponseMode mode) {
  return mode == ResponseMode::Binary ? "binary" : "belief";
}

ItemSet parse_item_set(std::string_view text) {
  if (text == "GS") return ItemSet::GS;
  if (text == "QA") return ItemSet::QA;
  throw ContractError("set must be GS or QA, got '" + std::string(text) + "'");
}

ResponseMode parse_response_mode(std::string_view text) {
  if (text == "binary") return ResponseMode::Binary;
  if (text == "belief") return ResponseMode::Belief;
  throw ContractError("response_mode must be binary or belief, got '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Corpus

Corpus::Corpus(std::vector<Item> items) : items_(std::move(items)) {
  std::unordered_map<std::string, std::pair<int, ItemSet>> sources;
  std::size_t qa = 0, qa_pos = 0, gs = 0, gs_pos = 0;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const Item& item = items_[i];
    if (item.true_label != 0 && item.true_label != 1) {
      throw ConstructionError("item " + item.id + " has a non-binary label");
    }
    if (!index_.emplace(item.id, i).second) {
      throw ConstructionError("duplicate item id " + item.id);
    }
    auto [it, inserted] = sources.emplace(item.source_id, std::pair{item.true_label, item.set});
    if (!inserted && (it->second.first != item.true_label || it->second.second != item.set)) {
      throw ConstructionError("source " + item.source_id +
                              " mixes labels or sets across its copies");
    }
    if (item.set == ItemSet::QA) {
      ++qa;
      qa_pos += static_cast<std::size_t>(item.true_label);
    } else {
      ++gs;
      gs_pos += static_cast<std::size_t>(item.true_label);
    }
  }
  qa_prevalence_ = qa ? static_cast<double>(qa_pos) / static_cast<double>(qa) : 0.0;
  gs_prevalence_ = gs ? static_cast<double>(gs_pos) / static_cast<double>(gs) : 0.0;
}

std::vector<const Item*> Corpus::subset(ItemSet set) const {
  std::vector<const Item*> out;
  for (const Item& item : items_) {
    if (item.set == set) out.push_back(&item);
  }
  return out;
}

std::size_t Corpus::count(ItemSet set) const {
  return static_cast<std::size_t>(
      std::count_if(items_.begin(), items_.end(), [&](const Item& i) { return i.set == set; }));
}

std::size_t Corpus::count_positive(ItemSet set) const {
  return static_cast<std::size_t>(std::count_if(items_.begin(), items_.end(), [&](const Item& i) {
    return i.set == set && i.true_label == 1;
  }));
}

bool Corpus::contains(std::string_view id) const { return index_.contains(std::string(id)); }

const Item& Corpus::at(std::string_view id) const { return items_[index_of(id)]; }

std::size_t Corpus::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) throw ContractError("unknown item id " + std::string(id));
  return it->second;
}

namespace {

std::string numbered(std::string_view prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", n);
  return std::string(prefix) + buf;
}

void add_set(std::vector<Item>& items, ItemSet set, std::size_t n_pos, std::size_t n_neg,
             std::size_t augmentation) {
  const std::string tag = set == ItemSet::GS ? "gs" : "qa";
  for (std::size_t s = 0; s < n_pos; ++s) {
    SourceId src = numbered(tag + "-p", s);
    items.push_back({src, 1, set, src});
  }
  for (std::size_t s = 0; s < n_neg; ++s) {
    SourceId src = numbered(tag + "-n", s);
    items.push_back({src, 0, set, src});
    for (std::size_t r = 1; r <= augmentation; ++r) {
      items.push_back({src + "-r" + std::to_string(r), 0, set, src});
    }
  }
}

}  // namespace

Corpus build_corpus(const CorpusSpec& spec) {
  if (spec.qa_unique_pos + spec.qa_unique_neg == 0) {
    throw ConstructionError("QA set would be empty");
  }
  if (spec.gs_unique_pos + spec.gs_unique_neg == 0) {
    throw ConstructionError("GS set would be empty");
  }
  std::vector<Item> items;
  add_set(items, ItemSet::QA, spec.qa_unique_pos, spec.qa_unique_neg,
          spec.qa_negative_augmentation);
  add_set(items, ItemSet::GS, spec.gs_unique_pos, spec.gs_unique_neg,
          spec.gs_negative_augmentation);
  return Corpus(std::move(items));
}

void write_corpus_csv(std::ostream& out, const Corpus& corpus) {
  csv::write_row(out, {"item_id", "source_id", "set", "true_label"});
  for (const Item& item : corpus.items()) {
    csv::write_row(out, {item.id, item.source_id, std::string(to_string(item.set)),
                         std::to_string(item.true_label)});
  }
}

Corpus read_corpus_csv(std::istream& in) {
  csv::Reader reader(in);
  if (!reader.read_header()) throw ContractError("corpus CSV is empty");
  const std::size_t c_id = reader.column("item_id"), c_src = reader.column("source_id"),
                    c_set = reader.column("set"), c_label = reader.column("true_label");
  std::vector<Item> items;
  while (auto row = reader.next()) {
    if (row->size() != reader.header().size()) {
      throw ContractError("corpus CSV line " + std::to_string(reader.line()) +
                          ": wrong field count");
    }
    Item item;
    item.id = (*row)[c_id];
    item.source_id = (*row)[c_src];
    item.set = parse_item_set((*row)[c_set]);
    item.true_label = static_cast<int>(csv::parse_int((*row)[c_label]));
    items.push_back(std::move(item));
  }
  return Corpus(std::move(items));
}

// ---------------------------------------------------------------------------
// JudgmentTable

JudgmentTable::JudgmentTable(std::vector<Judgment> judgments) : judgments_(std::move(judgments)) {
  for (std::size_t i = 0; i < judgments_.size(); ++i) {
    by_item_[judgments_[i].item_id].push_back(i);
    by_annotator_[judgments_[i].annotator_id].push_back(i);
  }
}

std::vector<const Judgment*> JudgmentTable::for_item(std::string_view item) const {
  std::vector<const Judgment*> out;
  if (auto it = by_item_.find(std::string(item)); it != by_item_.end()) {
    for (std::size_t i : it->second) out.push_back(&judgments_[i]);
  }
  return out;
}

std::vector<const Judgment*> JudgmentTable::for_annotator(std::string_view annotator) const {
  std::vector<const Judgment*> out;
  if (auto it = by_annotator_.find(std::string(annotator)); it != by_annotator_.end()) {
    for (std::size_t i : it->second) out.push_back(&judgments_[i]);
  }
  return out;
}

namespace {

constexpr const char* kJudgmentColumns[] = {"annotator_id", "item_id",       "set",
                                            "true_label",   "response_mode", "value",
                                            "trial_index",  "gs_prevalence"};

}  // namespace

IngestResult ingest_judgments(std::istream& in, const Corpus& corpus) {
  IngestResult result;
  csv::Reader reader(in);
  if (!reader.read_header()) return result;
  std::size_t col[8];
  for (std::size_t c = 0; c < 8; ++c) col[c] = reader.column(kJudgmentColumns[c]);

  std::set<std::tuple<std::string, std::string, std::uint64_t>> seen;
  std::vector<Judgment> accepted;
  while (auto row = reader.next()) {
    const std::size_t line = reader.line();
    auto reject = [&](std::string msg) { result.errors.push_back({line, std::move(msg)}); };
    if (row->size() != reader.header().size()) {
      reject("expected " + std::to_string(reader.header().size()) + " fields, got " +
             std::to_string(row->size()));
      continue;
    }
    const auto& f = *row;
    try {
      Judgment j;
      j.annotator_id = f[col[0]];
      j.item_id = f[col[1]];
      j.set = parse_item_set(f[col[2]]);
      j.true_label = static_cast<int>(csv::parse_int(f[col[3]]));
      j.mode = parse_response_mode(f[col[4]]);
      j.value = csv::parse_double(f[col[5]]);
      const long long trial = csv::parse_int(f[col[6]]);
      j.condition.gs_prevalence = csv::parse_double(f[col[7]]);
      j.condition.mode = j.mode;

      if (j.annotator_id.empty()) {
        reject("empty annotator_id");
        continue;
      }
      if (trial < 0) {
        reject("negative trial_index");
        continue;
      }
      j.trial_index = static_cast<std::uint64_t>(trial);
      if (j.true_label != 0 && j.true_label != 1) {
        reject("true_label must be 0 or 1");
        continue;
      }
      if (!(j.value >= 0.0 && j.value <= 1.0)) {
        reject("value " + f[col[5]] + " outside [0,1]");
        continue;
      }
      if (j.mode == ResponseMode::Binary && j.value != 0.0 && j.value != 1.0) {
        reject("binary value must be exactly 0 or 1");
        continue;
      }
      if (!(j.condition.gs_prevalence >= 0.0 && j.condition.gs_prevalence <= 1.0)) {
        reject("gs_prevalence outside [0,1]");
        continue;
      }
      if (!corpus.contains(j.item_id)) {
        reject("unknown item_id " + j.item_id);
        continue;
      }
      const Item& item = corpus.at(j.item_id);
      if (item.set != j.set || item.true_label != j.true_label) {
        reject("set/true_label disagree with corpus for " + j.item_id);
        continue;
      }
      if (!seen.emplace(j.annotator_id, j.item_id, j.trial_index).second) {
        reject("duplicate (annotator, item, trial_index)");
        continue;
      }
      j.feedback_shown = j.set == ItemSet::GS;
      accepted.push_back(std::move(j));
    } catch (const ContractError& e) {
      reject(e.what());
    }
  }
  result.table = JudgmentTable(std::move(accepted));
  return result;
}

void write_judgments_csv(std::ostream& out, const JudgmentTable& table) {
  csv::write_row(out, {std::begin(kJudgmentColumns), std::end(kJudgmentColumns)});
  for (const Judgment& j : table.judgments()) {
    csv::write_row(out, {j.annotator_id, j.item_id, std::string(to_string(j.set)),
                         std::to_string(j.true_label), std::string(to_string(j.mode)),
                         csv::format_double(j.value), std::to_string(j.trial_index),
                         csv::format_double(j.condition.gs_prevalence)});
  }
}

JudgmentTable filter_judgments(const JudgmentTable& table, std::size_t min_trials,
                               DedupPolicy dedup) {
  const auto all = table.judgments();
  std::vector<bool> keep(all.size(), true);

  if (dedup == DedupPolicy::FirstResponse) {
    // (annotator, item, gs_prevalence, mode) -> index of earliest trial
    std::map<std::tuple<std::string, std::string, double, ResponseMode>, std::size_t> first;
    for (std::size_t i = 0; i < all.size(); ++i) {
      const Judgment& j = all[i];
      auto key = std::tuple{j.annotator_id, j.item_id, j.condition.gs_prevalence, j.condition.mode};
      auto [it, inserted] = first.emplace(key, i);
      if (inserted) continue;
      if (j.trial_index < all[it->second].trial_index) {
        keep[it->second] = false;
        it->second = i;
      } else {
        keep[i] = false;
      }
    }
  }

  // Count after dedup so every survivor keeps at least min_trials judgments.
  std::map<std::string, std::size_t> per_annotator;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (keep[i]) ++per_annotator[all[i].annotator_id];
  }
  std::vector<Judgment> out;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (keep[i] && per_annotator[all[i].annotator_id] >= min_trials) out.push_back(all[i]);
  }
  return JudgmentTable(std::move(out));
}

JudgmentTable concat(std::span<const JudgmentTable> tables) {
  std::vector<Judgment> all;
  for (const auto& t : tables) all.insert(all.end(), t.judgments().begin(), t.judgments().end());
  return JudgmentTable(std::move(all));
}

}  // namespace crowdcal
