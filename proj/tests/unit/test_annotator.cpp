#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "crowdcal/annotator.hpp"
#include "crowdcal/error.hpp"
#include "crowdcal/metrics.hpp"
#include "crowdcal/random.hpp"

using namespace crowdcal;

namespace {

Corpus small_corpus(std::size_t pos, std::size_t neg, std::size_t aug = 0) {
  return build_corpus({pos, neg, pos, neg, aug, aug});
}

// Alternating positive/negative stream of `n` trials over one corpus set.
std::vector<ItemId> alternating(const Corpus& c, ItemSet set, std::size_t n) {
  std::vector<ItemId> pos, neg, out;
  for (const Item* i : c.subset(set)) (i->true_label ? pos : neg).push_back(i->id);
  for (std::size_t t = 0; t < n; ++t) {
    const auto& from = t % 2 == 0 ? pos : neg;
    out.push_back(from[(t / 2) % from.size()]);
  }
  return out;
}

double accuracy(const std::vector<Judgment>& js) {
  double hits = 0;
  for (const auto& j : js) hits += (j.value >= 0.5) == (j.true_label == 1);
  return hits / static_cast<double>(js.size());
}

struct Rates {
  std::vector<double> miss, fa;
};

Rates qa_rates(const JudgmentTable& t) {
  Rates r;
  for (const auto& [a, idx] : t.by_annotator()) {
    double pos = 0, missed = 0, neg = 0, alarms = 0;
    for (std::size_t i : idx) {
      const Judgment& j = t.judgments()[i];
      if (j.set != ItemSet::QA) continue;
      if (j.true_label) {
        ++pos;
        missed += j.value < 0.5;
      } else {
        ++neg;
        alarms += j.value >= 0.5;
      }
    }
    r.miss.push_back(missed / pos);
    r.fa.push_back(alarms / neg);
  }
  return r;
}

}  // namespace

TEST_CASE("profile and contest validation") {
  CHECK_THROWS_AS((AnnotatorProfile{-0.1}).validate(), ContractError);
  CHECK_THROWS_AS((AnnotatorProfile{1, 0, 1.5}).validate(), ContractError);
  CHECK_THROWS_AS((AnnotatorProfile{1, 0, 0, 0}).validate(), ContractError);
  CHECK_THROWS_AS((AnnotatorProfile{1, 0, 0, 1, 2}).validate(), ContractError);
  AnnotatorProfile{}.validate();
  const Corpus c = small_corpus(2, 2);
  ContestConfig cfg;
  cfg.corpus = &c;
  cfg.gs_fraction = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg.gs_fraction = 0.5;
  cfg.n_trials = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("sample_trial_stream: every source at most once") {
  const Corpus c = small_corpus(5, 5, 3);  // 10 sources per set
  ContestConfig cfg;
  cfg.corpus = &c;
  cfg.n_trials = 20;
  cfg.gs_fraction = 1.0 / 3.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cfg.seed = seed;
    const auto stream = sample_trial_stream(cfg);
    REQUIRE(stream.size() == 20);
    std::set<SourceId> sources;
    for (const auto& id : stream) CHECK(sources.insert(c.at(id).source_id).second);
  }
}

TEST_CASE("sample_trial_stream: exhaustion names the trial") {
  const Corpus c = small_corpus(2, 2, 1);  // 4 + 4 sources
  ContestConfig cfg;
  cfg.corpus = &c;
  cfg.n_trials = 9;
  try {
    sample_trial_stream(cfg);
    FAIL("expected StreamError");
  } catch (const StreamError& e) {
    CHECK(e.trial_index == 8);
  }
}

TEST_CASE("sample_trial_stream: GS count near gs_fraction * n") {
  const Corpus c = small_corpus(400, 400);
  ContestConfig cfg;
  cfg.corpus = &c;
  cfg.n_trials = 300;
  const double sd = std::sqrt(300.0 * (1.0 / 3.0) * (2.0 / 3.0));
  CHECK(sd == doctest::Approx(8.16).epsilon(1e-3));
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    cfg.seed = seed;
    const auto stream = sample_trial_stream(cfg);
    const auto gs = std::count_if(stream.begin(), stream.end(),
                                  [&](const ItemId& id) { return c.at(id).set == ItemSet::GS; });
    CHECK(std::abs(static_cast<double>(gs) - 100.0) < 3.0 * sd);
  }
}

TEST_CASE("sample_trial_stream: determinism") {
  const Corpus c = small_corpus(50, 50, 2);
  ContestConfig cfg;
  cfg.corpus = &c;
  cfg.n_trials = 80;
  cfg.seed = 42;
  CHECK(sample_trial_stream(cfg) == sample_trial_stream(cfg));
  cfg.seed = 43;
  const auto other = sample_trial_stream(cfg);
  cfg.seed = 42;
  CHECK(other != sample_trial_stream(cfg));
}

TEST_CASE("simulate_annotator: high d' is near perfect") {
  const Corpus c = small_corpus(10, 10);
  const auto stream = alternating(c, ItemSet::QA, 2000);
  for (double c0 : {-1.0, 0.0, 1.0}) {
    AnnotatorProfile p{10.0, c0, 0.0, 1.0, 0.0};
    Rng rng(5);
    CHECK(accuracy(simulate_annotator(p, stream, c, ResponseMode::Binary, rng)) > 0.99);
  }
}

TEST_CASE("simulate_annotator: zero d' is at chance") {
  const Corpus c = small_corpus(10, 10);
  const std::size_t n = 20000;
  const auto stream = alternating(c, ItemSet::QA, n);
  AnnotatorProfile p{0.0, 0.0, 0.0, 1.0, 0.0};
  Rng rng(9);
  const double acc = accuracy(simulate_annotator(p, stream, c, ResponseMode::Binary, rng));
  CHECK(std::abs(acc - 0.5) < 3.0 * std::sqrt(0.25 / n));
}

TEST_CASE("simulate_annotator: determinism") {
  const Corpus c = small_corpus(10, 10);
  const auto stream = alternating(c, ItemSet::GS, 100);
  AnnotatorProfile p{1.5, 0.2, 0.2, 4.0, 0.1};
  for (ResponseMode mode : {ResponseMode::Binary, ResponseMode::Belief}) {
    Rng a(77), b(77);
    CHECK(simulate_annotator(p, stream, c, mode, a) == simulate_annotator(p, stream, c, mode, b));
  }
}

TEST_CASE("simulate_annotator: criterion steps after GS errors only") {
  const Corpus c = small_corpus(10, 10);
  auto stream = alternating(c, ItemSet::GS, 200);
  const auto qa = alternating(c, ItemSet::QA, 200);
  stream.insert(stream.end(), qa.begin(), qa.end());
  AnnotatorProfile p{1.0, 0.0, 0.25, 4.0, 0.1};
  for (ResponseMode mode : {ResponseMode::Binary, ResponseMode::Belief}) {
    Rng rng(3);
    SimulationTrace trace;
    const auto js = simulate_annotator(p, stream, c, mode, rng, "a0", &trace);
    for (std::size_t t = 0; t + 1 < js.size(); ++t) {
      const double step = trace.criterion[t + 1] - trace.criterion[t];
      const bool positive = js[t].value >= 0.5;
      double expected = 0.0;
      if (js[t].set == ItemSet::GS && positive && js[t].true_label == 0) expected = 0.25;
      if (js[t].set == ItemSet::GS && !positive && js[t].true_label == 1) expected = -0.25;
      CHECK(step == doctest::Approx(expected));
      CHECK(js[t].feedback_shown == (js[t].set == ItemSet::GS));
    }
  }
}

TEST_CASE("property: no adaptation means feedback composition has no effect") {
  // Same labels in the same order, once as GS trials and once as QA trials.
  const Corpus c = small_corpus(10, 10);
  const auto as_gs = alternating(c, ItemSet::GS, 300);
  const auto as_qa = alternating(c, ItemSet::QA, 300);
  for (double eta : {0.0, 0.3}) {
    AnnotatorProfile p{1.2, 0.4, eta, 3.0, 0.05};
    Rng a(21), b(21);
    SimulationTrace ta, tb;
    const auto ja = simulate_annotator(p, as_gs, c, ResponseMode::Belief, a, "a", &ta);
    const auto jb = simulate_annotator(p, as_qa, c, ResponseMode::Belief, b, "a", &tb);
    bool same = true;
    for (std::size_t t = 0; t < ja.size(); ++t) same = same && ja[t].value == jb[t].value;
    if (eta == 0.0) {
      CHECK(same);
      CHECK(ta.final_criterion == 0.4);
    } else {
      CHECK_FALSE(same);
    }
  }
}

TEST_CASE("property: beliefs are monotone in evidence without lapses") {
  const Corpus c = small_corpus(10, 10);
  const auto stream = alternating(c, ItemSet::QA, 500);
  AnnotatorProfile p{1.5, -0.3, 0.0, 2.5, 0.0};
  Rng rng(8);
  SimulationTrace trace;
  const auto js = simulate_annotator(p, stream, c, ResponseMode::Belief, rng, "a", &trace);
  std::vector<std::size_t> order(js.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return trace.evidence[a] < trace.evidence[b]; });
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    CHECK(js[order[i]].value <= js[order[i + 1]].value);
  }
}

TEST_CASE("score_quadratic") {
  CHECK(score_quadratic(1.0, 1) == 1.0);
  CHECK(score_quadratic(0.5, 0) == 0.75);
  CHECK(score_quadratic(0.5, 1) == 0.75);
  CHECK(score_quadratic(0.0, 1) == 0.0);
  CHECK(score_quadratic(0.5f, 1) == 0.75f);
}

namespace {

Judgment gs_judgment(const Corpus& c, const std::string& who, const std::string& item,
                     double value, ResponseMode mode, std::uint64_t trial) {
  const Item& it = c.at(item);
  Judgment j;
  j.annotator_id = who;
  j.item_id = item;
  j.mode = mode;
  j.value = value;
  j.trial_index = trial;
  j.set = it.set;
  j.true_label = it.true_label;
  j.feedback_shown = it.set == ItemSet::GS;
  j.condition = {c.gs_prevalence(), mode};
  return j;
}

}  // namespace

TEST_CASE("leaderboard: accuracy ranking, ties and exclusions") {
  const Corpus c = small_corpus(5, 5);
  std::vector<Judgment> js;
  // "b" gets 9 of 10 right, "a" 7 of 10, "c" 7 of 10, "d" sees only QA.
  std::uint64_t t = 0;
  for (const auto& [who, wrong] : {std::pair{"b", 1}, std::pair{"a", 3}, std::pair{"c", 3}}) {
    int n = 0;
    for (const Item* it : c.subset(ItemSet::GS)) {
      const double v = n++ < wrong ? 1.0 - it->true_label : it->true_label;
      js.push_back(gs_judgment(c, who, it->id, v, ResponseMode::Binary, t++));
    }
  }
  js.push_back(gs_judgment(c, "d", "qa-p0000", 1.0, ResponseMode::Binary, t++));
  const Leaderboard board = leaderboard(JudgmentTable(js), ResponseMode::Binary);
  REQUIRE(board.ranking.size() == 3);
  CHECK(board.ranking[0].annotator_id == "b");
  CHECK(board.ranking[0].performance == doctest::Approx(0.9));
  CHECK(board.ranking[1].annotator_id == "a");
  CHECK(board.ranking[2].annotator_id == "c");
  CHECK(board.ranking[1].performance == board.ranking[2].performance);
  REQUIRE(board.warnings.size() == 1);
  CHECK(board.warnings[0].find("d") != std::string::npos);
}

TEST_CASE("leaderboard: quadratic scores and a singleton") {
  const Corpus c = small_corpus(1, 1);
  const JudgmentTable t({gs_judgment(c, "x", "gs-p0000", 0.5, ResponseMode::Belief, 0),
                         gs_judgment(c, "x", "gs-n0000", 0.0, ResponseMode::Belief, 1)});
  const Leaderboard board = leaderboard(t, ResponseMode::Belief);
  REQUIRE(board.ranking.size() == 1);
  CHECK(board.ranking[0].performance == doctest::Approx(0.875));
  CHECK(board.ranking[0].n_gs_trials == 2);
}

TEST_CASE("simulate_population: identical output for any thread count") {
  const Corpus c = small_corpus(60, 60, 1);
  ContestConfig contest;
  contest.corpus = &c;
  contest.n_trials = 60;
  PopulationSpec pop;
  pop.n_annotators = 12;
  const auto one = simulate_population(pop, contest, ResponseMode::Belief, 99, "w", 1);
  const auto four = simulate_population(pop, contest, ResponseMode::Belief, 99, "w", 4);
  CHECK(one == four);
  CHECK(one.by_annotator().size() == 12);
  const auto other = simulate_population(pop, contest, ResponseMode::Belief, 100, "w", 1);
  CHECK_FALSE(one == other);
}

TEST_CASE("property: low GS prevalence raises misses and lowers false alarms") {
  const Corpus low = build_corpus({150, 150, 116, 116, 3, 3});
  const Corpus high = build_corpus({150, 150, 116, 116, 3, 0});
  PopulationSpec pop;  // 200 annotators
  ContestConfig contest;
  contest.n_trials = 300;
  for (ResponseMode mode : {ResponseMode::Binary, ResponseMode::Belief}) {
    contest.corpus = &low;
    const Rates r20 = qa_rates(simulate_population(pop, contest, mode, 1));
    contest.corpus = &high;
    const Rates r50 = qa_rates(simulate_population(pop, contest, mode, 2));
    const auto m20 = replicate_ci(r20.miss), m50 = replicate_ci(r50.miss);
    const auto f20 = replicate_ci(r20.fa), f50 = replicate_ci(r50.fa);
    CHECK(m20.n >= 200);
    CHECK(m20.lower > m50.upper);
    CHECK(f20.upper < f50.lower);
  }
}
