#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "explink/corpus.hpp"
#include "explink/error.hpp"
#include "explink/synth.hpp"

namespace fs = std::filesystem;
using namespace explink;

namespace {

fs::path temp_file(const std::string& name, const std::string& content) {
  const fs::path dir = fs::temp_directory_path() / "explink_corpus_test";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  std::ofstream(p) << content;
  return p;
}

Expert make_expert(const std::string& id, const std::string& name,
                   std::size_t n) {
  Expert e{id, name, {}, Source::kReference};
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<std::string> kw{"k" + std::to_string(i)};
    const std::vector<std::string> au{name};
    e.support.push_back(make_paper(id + " paper " + std::to_string(i), kw, au,
                                   "org", "venue", 2000 + int(i)));
  }
  return e;
}

// Brute force of the two variant rules over whitespace tokens.
std::set<std::string> naive_variants(const std::vector<std::string>& toks) {
  std::set<std::string> out;
  auto join = [](const std::vector<std::string>& t) {
    std::string s;
    for (const auto& x : t) s += (s.empty() ? "" : " ") + x;
    return s;
  };
  std::vector<std::string> rot{toks.back()};
  rot.insert(rot.end(), toks.begin(), toks.end() - 1);
  for (const auto& order : {toks, rot}) {
    out.insert(join(order));
    auto init = order;
    for (std::size_t i = 0; i + 1 < init.size(); ++i) init[i] = init[i].substr(0, 1);
    out.insert(join(init));
  }
  return out;
}

}  // namespace

TEST(NameVariants, TwoTokenExample) {
  EXPECT_EQ(generate_name_variants("Bo Li"),
            (std::set<std::string>{"bo li", "li bo", "b li", "l bo"}));
}

TEST(NameVariants, SingleToken) {
  EXPECT_EQ(generate_name_variants("Li"), (std::set<std::string>{"li"}));
}

TEST(NameVariants, ThreeTokensMatchEnumeration) {
  EXPECT_EQ(generate_name_variants("Jing Wei Zhang"),
            naive_variants({"jing", "wei", "zhang"}));
}

TEST(NameVariants, EmptyThrows) {
  EXPECT_THROW(generate_name_variants(""), Error);
}

TEST(NameVariants, RotationIsSymmetricForTwoTokens) {
  for (const char* name : {"Ada Lovelace", "Xi Chen", "Alan Turing"}) {
    const auto v = generate_name_variants(name);
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
    const auto sp = lower.find(' ');
    const std::string rotated = lower.substr(sp + 1) + " " + lower.substr(0, sp);
    ASSERT_TRUE(v.count(rotated));
    EXPECT_TRUE(generate_name_variants(rotated).count(lower));
  }
}

TEST(CandidateSet, RotationMatches) {
  Corpus c({make_expert("E1", "Bo Li", 2), make_expert("E2", "Ann Smith", 2)});
  EXPECT_EQ(c.candidate_set("Li Bo"), std::vector<std::string>{"E1"});
  EXPECT_TRUE(c.candidate_set("Nobody Here").empty());
}

TEST(CandidateSet, SyntheticMatchesPairwiseBruteForce) {
  SynthConfig cfg;
  cfg.n_experts = 80;
  cfg.papers_per_expert = 2;
  const auto syn = synth_corpus(cfg);
  const auto& experts = syn.reference.experts();
  for (const auto& q : experts) {
    const auto qv = generate_name_variants(q.name);
    std::vector<std::string> expect;
    for (const auto& e : experts) {
      const auto ev = generate_name_variants(e.name);
      if (std::any_of(ev.begin(), ev.end(),
                      [&](const std::string& s) { return qv.count(s) > 0; })) {
        expect.push_back(e.id);
      }
    }
    std::sort(expect.begin(), expect.end());
    EXPECT_EQ(syn.reference.candidate_set(q.name), expect) << q.name;
  }
}

TEST(Corpus, RejectsDuplicateIdsAndEmptySupport) {
  EXPECT_THROW(Corpus({make_expert("E1", "A B", 1), make_expert("E1", "C D", 1)}),
               Error);
  EXPECT_THROW(Corpus({make_expert("E1", "A B", 0)}), Error);
}

TEST(Load, TwoExpertsThreePapers) {
  const auto p = temp_file(
      "two.jsonl",
      R"({"id":"a","name":"Bo Li","papers":[{"title":"t1"},{"title":"t2"},{"title":"t3","keywords":["x"],"authors":["Bo Li"],"org":"o","venue":"v","year":2001}]})"
      "\n"
      R"({"id":"b","name":"Ann Lee","papers":[{"title":"u1"},{"title":"u2"},{"title":"u3"}]})"
      "\n");
  const Corpus c = load_reference_corpus(p);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.expert("a").support.size(), 3u);
  EXPECT_EQ(c.expert("b").support.size(), 3u);
  EXPECT_EQ(c.expert("a").support[2].field("venue"), "v");
}

TEST(Load, DuplicateIdNamesTheId) {
  const auto p = temp_file("dup.jsonl",
                           R"({"id":"dup7","name":"A B","papers":[{"title":"t"}]})"
                           "\n"
                           R"({"id":"dup7","name":"C D","papers":[{"title":"u"}]})"
                           "\n");
  try {
    load_reference_corpus(p);
    FAIL() << "expected error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("dup7"), std::string::npos);
  }
}

TEST(Load, MalformedLineReportsLineNumber) {
  const auto p = temp_file("bad.jsonl",
                           R"({"id":"a","name":"A B","papers":[{"title":"t"}]})"
                           "\n{not json\n");
  try {
    load_reference_corpus(p);
    FAIL() << "expected parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  const auto q = temp_file("missing.jsonl", R"({"id":"a","papers":[{"title":"t"}]})" "\n");
  EXPECT_THROW(load_reference_corpus(q), ParseError);
}

TEST(Load, NewsKeepsSixSentencesEachSide) {
  std::string before, after;
  for (int i = 0; i < 15; ++i) before += (i ? "," : "") + std::string("\"b") + std::to_string(i) + "\"";
  for (int i = 0; i < 9; ++i) after += (i ? "," : "") + std::string("\"a") + std::to_string(i) + "\"";
  const auto p = temp_file("news.jsonl", R"({"mention_id":"m1","name":"Bo Li","sentences_before":[)" +
                                             before + R"(],"sentences_after":[)" + after +
                                             R"(],"truth_id":"E1"})" "\n");
  const auto ms = load_mentions(p, Schema::kNews);
  ASSERT_EQ(ms.size(), 1u);
  ASSERT_EQ(ms[0].support.size(), 12u);
  // The six sentences nearest the name are kept.
  EXPECT_EQ(ms[0].support[0].fields[0].value, "b9");
  EXPECT_EQ(ms[0].support[5].fields[0].value, "b14");
  EXPECT_EQ(ms[0].support[6].fields[0].value, "a0");
  EXPECT_EQ(ms[0].support[11].fields[0].value, "a5");
  EXPECT_EQ(ms[0].truth_expert_id, "E1");
}

TEST(Load, LinkedInFields) {
  const auto p = temp_file(
      "li.jsonl",
      R"({"user_id":"u1","name":"Bo Li","affiliation":"Acme","skills":["c++","ml"],"summary":"First one. Second one!"})"
      "\n");
  const auto ms = load_mentions(p, Schema::kLinkedIn);
  ASSERT_EQ(ms.size(), 1u);
  ASSERT_EQ(ms[0].support.size(), 4u);
  EXPECT_EQ(ms[0].support[0].field("affiliation"), "Acme");
  EXPECT_EQ(ms[0].support[1].field("skills"), "c++, ml");
  EXPECT_EQ(ms[0].support[2].kind, SupportKind::kSentence);
  EXPECT_FALSE(ms[0].truth_expert_id.has_value());
}

TEST(Load, RoundTripIsByteIdentical) {
  SynthConfig cfg;
  cfg.n_experts = 8;
  cfg.papers_per_expert = 5;
  cfg.mentions_per_expert = 1;
  const auto syn = synth_corpus(cfg);
  const fs::path dir = fs::temp_directory_path() / "explink_corpus_test";
  fs::create_directories(dir);
  save_reference_corpus(syn.reference, dir / "ref1.jsonl");
  const Corpus back = load_reference_corpus(dir / "ref1.jsonl");
  EXPECT_EQ(back, syn.reference);
  save_reference_corpus(back, dir / "ref2.jsonl");
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(dir / "ref1.jsonl"), slurp(dir / "ref2.jsonl"));

  save_mentions(syn.mentions, Schema::kNews, dir / "news1.jsonl");
  const auto ms = load_mentions(dir / "news1.jsonl", Schema::kNews);
  save_mentions(ms, Schema::kNews, dir / "news2.jsonl");
  EXPECT_EQ(slurp(dir / "news1.jsonl"), slurp(dir / "news2.jsonl"));
}

TEST(SampleInstance, CapAndDistinct) {
  Rng rng(1);
  const auto e = make_expert("E", "A B", 10);
  const auto inst = sample_instance(e, 6, rng);
  EXPECT_EQ(inst.items.size(), 6u);
  EXPECT_EQ(std::set<std::size_t>(inst.items.begin(), inst.items.end()).size(), 6u);
  for (auto i : inst.items) EXPECT_LT(i, 10u);
  EXPECT_EQ(sample_instance(make_expert("F", "C D", 3), 6, rng).items.size(), 3u);
}

TEST(SampleInstance, DeterministicAndValidated) {
  const auto e = make_expert("E", "A B", 20);
  Rng a(99), b(99);
  EXPECT_EQ(sample_instance(e, 6, a), sample_instance(e, 6, b));
  EXPECT_THROW(sample_instance(e, 0, a), Error);
  Expert empty{"X", "X Y", {}, Source::kReference};
  EXPECT_THROW(sample_instance(empty, 3, a), Error);
}

TEST(SampleTriplets, CountsAndInvariants) {
  std::vector<Expert> experts;
  for (int i = 0; i < 12; ++i) {
    experts.push_back(make_expert("E" + std::to_string(i), "N" + std::to_string(i) + " X", 12));
  }
  experts.push_back(make_expert("short", "S T", 11));
  const Corpus c(std::move(experts));
  Rng rng(5);
  const auto ts = sample_triplets(c, {6, 9, 10}, rng);
  ASSERT_EQ(ts.size(), 120u);
  std::size_t negs = 0;
  for (const auto& t : ts) {
    EXPECT_NE(t.anchor.expert_id, "short");
    EXPECT_EQ(t.anchor.expert_id, t.positive.expert_id);
    for (auto i : t.anchor.items) {
      EXPECT_EQ(std::count(t.positive.items.begin(), t.positive.items.end(), i), 0);
    }
    for (const auto& n : t.negatives) EXPECT_NE(n.expert_id, t.anchor.expert_id);
    negs += t.negatives.size();
  }
  EXPECT_EQ(negs, 120u * 9u);
  EXPECT_EQ(triplet_eligibility_threshold(6), 12u);
}

TEST(SampleTriplets, ForcedNegativeAndDeterminism) {
  const Corpus c({make_expert("A", "A A", 4), make_expert("B", "B B", 4)});
  Rng r1(3), r2(3);
  const auto t1 = sample_triplets(c, {2, 1, 5}, r1);
  const auto t2 = sample_triplets(c, {2, 1, 5}, r2);
  EXPECT_EQ(t1, t2);
  for (const auto& t : t1) {
    ASSERT_EQ(t.negatives.size(), 1u);
    EXPECT_EQ(t.negatives[0].expert_id, t.anchor.expert_id == "A" ? "B" : "A");
  }
}

TEST(SampleTriplets, ErrorNamesThreshold) {
  const Corpus c({make_expert("A", "A A", 11), make_expert("B", "B B", 11)});
  Rng rng(1);
  try {
    sample_triplets(c, {6, 1, 1}, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("12"), std::string::npos);
  }
}

TEST(Lookup, ResolvesOwners) {
  const Corpus c({make_expert("A", "A A", 2)});
  std::vector<ExternalMention> ms{{"m1", "A A", {make_sentence("hello")}, std::nullopt}};
  SupportLookup lookup(c);
  lookup.add(ms);
  EXPECT_EQ(lookup.support("A").size(), 2u);
  EXPECT_EQ(lookup.support("m1").size(), 1u);
  EXPECT_FALSE(lookup.contains("zz"));
  EXPECT_THROW(lookup.support("zz"), Error);
}
