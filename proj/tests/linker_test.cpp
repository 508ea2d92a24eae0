#include <gtest/gtest.h>

#include <filesystem>

#include "explink/error.hpp"
#include "explink/linker.hpp"
#include "explink/pretrain.hpp"
#include "explink/synth.hpp"

namespace fs = std::filesystem;
using namespace explink;

namespace {

struct Trained {
  SynthCorpus syn;
  Model model;
};

// Small corpus with a briefly pre-trained model, built once.
const Trained& trained() {
  static const Trained t = [] {
    SynthConfig sc;
    sc.n_experts = 12;
    sc.papers_per_expert = 12;
    sc.mentions_per_expert = 2;
    sc.shift = 0.6;
    Trained out{synth_corpus(sc), {}};
    ModelConfig mc;
    mc.d_tok = 24;
    mc.d_out = 24;
    auto texts = support_texts(out.syn.reference);
    const auto ext = support_texts(out.syn.mentions);
    texts.insert(texts.end(), ext.begin(), ext.end());
    out.model = Model(Vocab::build(texts, 1), mc, 2);
    TrainConfig tc;
    tc.L = 4;
    tc.n_neg = 3;
    tc.per_expert = 10;
    tc.epochs = 20;
    tc.lr_encoder = 1e-3;
    pretrain(out.model, out.syn.reference, tc);
    return out;
  }();
  return t;
}

fs::path fresh_path(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "explink_linker_test" / name;
  fs::create_directories(p.parent_path());
  fs::remove(p);
  return p;
}

LinkResult three_candidates() {
  return {"m1", {{"E1", 0.9}, {"E2", 0.4}, {"E3", -0.1}}, "E1"};
}

Corpus tiny_corpus() {
  std::vector<Expert> es;
  for (const char* id : {"E1", "E2", "E3"}) {
    es.push_back({id, "Bo Li", {make_sentence(std::string("text ") + id)}, Source::kReference});
  }
  return Corpus(es);
}

ExternalMention tiny_mention() {
  return {"m1", "Bo Li", {make_sentence("hello world")}, std::nullopt};
}

}  // namespace

TEST(Link, NoCandidatesIsEmpty) {
  const auto& t = trained();
  const ExternalMention m{"x", "Zzz Qqq", {make_sentence("anything")}, std::nullopt};
  const auto r = link(t.model, m, t.syn.reference, {});
  EXPECT_EQ(r.mention_id, "x");
  EXPECT_TRUE(r.ranked.empty());
  EXPECT_FALSE(r.accepted.has_value());
}

TEST(Link, DegenerateThresholds) {
  // Untrained weights keep scores away from the saturated ends of tanh.
  const auto& t = trained();
  const Model fresh(t.model.vocab, t.model.config, 77);
  for (const auto& m : t.syn.mentions) {
    const auto lo = link(fresh, m, t.syn.reference, {-1.0 + 1e-12, 100});
    ASSERT_FALSE(lo.ranked.empty());
    EXPECT_EQ(lo.accepted, lo.ranked[0].expert_id);
    const auto hi = link(fresh, m, t.syn.reference, {1.0 - 1e-12, 100});
    EXPECT_FALSE(hi.accepted.has_value());
  }
}

TEST(Link, ThresholdMonotone) {
  const auto& t = trained();
  const auto& m = t.syn.mentions[0];
  bool had = true;
  for (int i = 0; i <= 20; ++i) {
    const double th = -1.0 + 0.1 * i;
    const bool has = link(t.model, m, t.syn.reference, {th, 100}).accepted.has_value();
    EXPECT_FALSE(has && !had) << th;
    had = has;
  }
}

TEST(Link, MatchingVocabularyRanksExpertFirst) {
  const auto& t = trained();
  const Expert& e = t.syn.reference.experts()[5];
  ExternalMention m{"probe", e.name, {}, e.id};
  for (std::size_t i = 0; i < 6; ++i) m.support.push_back(make_sentence(support_text(e.support[i])));
  const auto r = link(t.model, m, t.syn.reference, {});
  ASSERT_GE(r.ranked.size(), 2u);
  EXPECT_EQ(r.ranked[0].expert_id, e.id);
}

TEST(Link, CacheGivesSameResult) {
  const auto& t = trained();
  CandidateEmbeddings cache(t.model, t.syn.reference, 100);
  for (const auto& m : t.syn.mentions) {
    EXPECT_EQ(link(t.model, m, t.syn.reference, {}),
              link(t.model, m, t.syn.reference, {}, &cache));
  }
}

TEST(Accept, Rule) {
  const auto r = three_candidates();
  EXPECT_EQ(accept(r.ranked, 0.9), "E1");
  EXPECT_FALSE(accept(r.ranked, 0.95).has_value());
  EXPECT_FALSE(accept({}, -1.0).has_value());
}

TEST(MentionKey, StableAndSensitive) {
  const std::vector<std::string> a{"one", "two"}, b{"one two"}, c{"two", "one"};
  EXPECT_EQ(mention_key("Bo Li", a), mention_key("Bo Li", a));
  EXPECT_NE(mention_key("Bo Li", a), mention_key("Bo Li", b));
  EXPECT_NE(mention_key("Bo Li", a), mention_key("Bo Li", c));
  EXPECT_NE(mention_key("Bo Li", a), mention_key("Li Bo", a));
  const auto k = mention_key("Bo Li", a);
  EXPECT_EQ(k.size(), 18u);
  EXPECT_EQ(k.substr(0, 2), "m-");
}

TEST(Json, RoundTrips) {
  const auto r = three_candidates();
  EXPECT_EQ(link_result_from_json(to_json(r)), r);
  LinkResult none{"m2", {}, std::nullopt};
  EXPECT_TRUE(to_json(none)["accepted"].is_null());
  EXPECT_EQ(link_result_from_json(to_json(none)), none);
  const auto& t = trained();
  for (const auto& m : t.syn.mentions) EXPECT_EQ(mention_from_json(to_json(m)), m);
}

TEST(Verdict, Parse) {
  EXPECT_EQ(parse_verdict("confirm"), Verdict::kConfirm);
  EXPECT_EQ(parse_verdict("correct"), Verdict::kCorrect);
  EXPECT_EQ(parse_verdict("reject_all"), Verdict::kRejectAll);
  EXPECT_THROW(parse_verdict("maybe"), Error);
  EXPECT_EQ(to_string(Verdict::kRejectAll), "reject_all");
}

TEST(ToTriplet, ConfirmCorrectReject) {
  const Corpus c = tiny_corpus();
  const auto m = tiny_mention();
  const auto r = three_candidates();
  const auto confirm = to_triplet({{"m1", Verdict::kConfirm, std::nullopt, 0}, m, r}, c);
  EXPECT_EQ(confirm.positive, "E1");
  EXPECT_EQ(confirm.negatives, (std::vector<std::string>{"E2", "E3"}));

  const auto correct = to_triplet({{"m1", Verdict::kCorrect, "E2", 0}, m, r}, c);
  EXPECT_EQ(correct.positive, "E2");
  EXPECT_EQ(correct.negatives, (std::vector<std::string>{"E1", "E3"}));

  const auto reject = to_triplet({{"m1", Verdict::kRejectAll, std::nullopt, 0}, m, r}, c);
  EXPECT_FALSE(reject.positive.has_value());
  EXPECT_EQ(reject.negatives.size(), 3u);

  EXPECT_THROW(to_triplet({{"m1", Verdict::kCorrect, "E9", 0}, m, r}, c), Error);
  EXPECT_THROW(to_triplet({{"m1", Verdict::kCorrect, std::nullopt, 0}, m, r}, c), Error);
  EXPECT_THROW(to_triplet({{"m1", Verdict::kConfirm, "E2", 0}, m, r}, c), Error);
  EXPECT_THROW(to_triplet({{"zz", Verdict::kConfirm, std::nullopt, 0}, m, r}, c), Error);
}

TEST(FeedbackStore, ReplayReconstructsTrainingSet) {
  const Corpus c = tiny_corpus();
  const auto path = fresh_path("replay.jsonl");
  std::vector<FeedbackTriplet> before;
  {
    FeedbackStore store(path);
    EXPECT_EQ(store.size(), 0u);
    store.submit({"m1", Verdict::kConfirm, std::nullopt, 10}, tiny_mention(),
                 three_candidates(), c);
    auto m2 = tiny_mention();
    m2.mention_id = "m2";
    auto r2 = three_candidates();
    r2.mention_id = "m2";
    store.submit({"m2", Verdict::kCorrect, "E3", 11}, m2, r2, c);
    EXPECT_THROW(store.submit({"m2", Verdict::kCorrect, "nope", 12}, m2, r2, c), Error);
    EXPECT_EQ(store.size(), 2u);
    before = store.training_set(c);
  }
  FeedbackStore reopened(path);
  EXPECT_EQ(reopened.size(), 2u);
  EXPECT_EQ(reopened.training_set(c), before);
  EXPECT_EQ(reopened.records()[1].feedback.corrected_expert_id, "E3");
}

TEST(FeedbackStore, CorruptLineReportsLine) {
  const auto path = fresh_path("corrupt.jsonl");
  {
    FeedbackStore store(path);
    store.submit({"m1", Verdict::kConfirm, std::nullopt, 1}, tiny_mention(),
                 three_candidates(), tiny_corpus());
  }
  { std::ofstream(path, std::ios::app) << "{broken\n"; }
  try {
    FeedbackStore store(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Retrain, EmptyStoreThrows) {
  const auto& t = trained();
  FeedbackStore store(fresh_path("empty.jsonl"));
  EXPECT_THROW(retrain_from_feedback(t.model, store, t.syn.reference, {}), Error);
}

TEST(Retrain, CorrectionMovesTopOne) {
  const auto& t = trained();
  // A mention the model currently links to the wrong expert.
  const ExternalMention* wrong = nullptr;
  LinkResult before;
  for (const auto& m : t.syn.mentions) {
    before = link(t.model, m, t.syn.reference, {});
    if (before.ranked.size() > 1 && before.ranked[0].expert_id != *m.truth_expert_id) {
      wrong = &m;
      break;
    }
  }
  ASSERT_NE(wrong, nullptr);
  FeedbackStore store(fresh_path("move.jsonl"));
  store.submit({wrong->mention_id, Verdict::kCorrect, *wrong->truth_expert_id, 0}, *wrong,
               before, t.syn.reference);
  RetrainConfig cfg;
  cfg.train.L = 4;
  cfg.train.n_neg = 3;
  cfg.train.lr_encoder = 1e-3;
  cfg.epochs = 30;
  const Model next = retrain_from_feedback(t.model, store, t.syn.reference, cfg);
  EXPECT_EQ(next.version, t.model.version + 1);
  EXPECT_EQ(link(next, *wrong, t.syn.reference, {}).ranked[0].expert_id, *wrong->truth_expert_id);
  EXPECT_FALSE(next.same_parameters(t.model));
}

TEST(Retrain, RejectAllOnlyIsNotTrainable) {
  const auto& t = trained();
  const auto& m = t.syn.mentions[1];
  const auto r = link(t.model, m, t.syn.reference, {});
  FeedbackStore store(fresh_path("reject.jsonl"));
  store.submit({m.mention_id, Verdict::kRejectAll, std::nullopt, 0}, m, r, t.syn.reference);
  EXPECT_THROW(retrain_from_feedback(t.model, store, t.syn.reference, {}), Error);
}
