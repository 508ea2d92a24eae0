#include "explink/synth.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "explink/error.hpp"

namespace explink {

namespace {

constexpr const char* kSyllables[16] = {"ka", "lo", "mi", "ne", "ru", "sa",
                                        "ti", "vo", "ba", "de", "fi", "go",
                                        "hu", "ja", "ke", "po"};

// Disjoint index ranges keep word classes from colliding.
constexpr std::size_t kTopicBase = 0;
constexpr std::size_t kBackgroundBase = 30000;
constexpr std::size_t kShiftBase = 35000;
constexpr std::size_t kAuxBase = 40000;
constexpr std::size_t kGivenBase = 50000;
constexpr std::size_t kFamilyBase = 55000;

std::string capitalized(std::string w) {
  w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

class WeightedPicker {
 public:
  explicit WeightedPicker(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t r = 0; r < n; ++r) w[r] = 1.0 / std::sqrt(r + 1.0);
    dist_ = std::discrete_distribution<std::size_t>(w.begin(), w.end());
  }
  std::size_t operator()(Rng& rng) { return dist_(rng); }

 private:
  std::discrete_distribution<std::size_t> dist_;
};

struct Profile {
  std::size_t topic_base;
  std::vector<std::string> coauthors;
  std::string org;
  std::string venue;
};

}  // namespace

std::string synth_word(std::size_t index) {
  // Four base-16 syllables: 65536 distinct words.
  std::string w;
  for (int shift = 12; shift >= 0; shift -= 4) {
    w += kSyllables[(index >> shift) & 0xF];
  }
  return w;
}

void SynthConfig::validate() const {
  if (n_experts < 2) throw Error("synth: n_experts must be >= 2");
  if (papers_per_expert < 1) throw Error("synth: papers_per_expert must be >= 1");
  if (topic_vocab < 1) throw Error("synth: topic_vocab must be >= 1");
  if (name_group_size < 1) throw Error("synth: name_group_size must be >= 1");
  if (overlap < 0.0 || overlap > 1.0) throw Error("synth: overlap must be in [0,1]");
  if (shift < 0.0 || shift >= 1.0) throw Error("synth: shift must be in [0,1)");
  if (sentence_tokens < 1) throw Error("synth: sentence_tokens must be >= 1");
  if (n_experts * topic_vocab > kBackgroundBase) {
    throw Error("synth: n_experts * topic_vocab too large");
  }
  if (background_vocab > kShiftBase - kBackgroundBase ||
      shift_vocab > kAuxBase - kShiftBase || shift_vocab < 1) {
    throw Error("synth: vocabulary sizes out of range");
  }
}

SynthCorpus synth_corpus(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  WeightedPicker topic_pick(cfg.topic_vocab);
  std::uniform_int_distribution<std::size_t> background_pick(
      0, std::max<std::size_t>(cfg.background_vocab, 1) - 1);
  std::uniform_int_distribution<std::size_t> shift_pick(0, cfg.shift_vocab - 1);

  std::size_t aux = kAuxBase;
  std::vector<Profile> profiles(cfg.n_experts);
  for (std::size_t e = 0; e < cfg.n_experts; ++e) {
    auto& p = profiles[e];
    p.topic_base = kTopicBase + e * cfg.topic_vocab;
    for (int c = 0; c < 4; ++c) {
      const std::string given = capitalized(synth_word(aux++));
      p.coauthors.push_back(given + " " + capitalized(synth_word(aux++)));
    }
    p.org = "University of " + capitalized(synth_word(aux++));
    p.venue = "Journal of " + capitalized(synth_word(aux++));
  }

  auto content_word = [&](const Profile& p) {
    if (cfg.background_vocab > 0 && unit(rng) < cfg.overlap) {
      return synth_word(kBackgroundBase + background_pick(rng));
    }
    return synth_word(p.topic_base + topic_pick(rng));
  };

  std::vector<Expert> experts;
  std::vector<std::string> names;
  for (std::size_t e = 0; e < cfg.n_experts; ++e) {
    const std::size_t group = e / cfg.name_group_size;
    const std::string given = capitalized(synth_word(kGivenBase + group));
    const std::string family = capitalized(synth_word(kFamilyBase + group));
    // Alternate between the two orderings of the colliding name.
    const std::string name =
        (e % 2 == 0) ? given + " " + family : family + " " + given;
    names.push_back(name);

    const auto& p = profiles[e];
    Expert ex;
    ex.id = "E" + std::to_string(e);
    ex.name = name;
    for (std::size_t k = 0; k < cfg.papers_per_expert; ++k) {
      std::string title;
      for (int t = 0; t < 8; ++t) {
        if (t) title += ' ';
        title += content_word(p);
      }
      std::vector<std::string> keywords;
      for (int t = 0; t < 3; ++t) keywords.push_back(content_word(p));
      std::vector<std::string> authors{name};
      std::uniform_int_distribution<std::size_t> co(0, p.coauthors.size() - 1);
      authors.push_back(p.coauthors[co(rng)]);
      ex.support.push_back(make_paper(capitalized(title), keywords, authors,
                                      p.org, p.venue,
                                      static_cast<int>(2000 + k % 20)));
    }
    experts.push_back(std::move(ex));
  }

  std::vector<ExternalMention> mentions;
  for (std::size_t e = 0; e < cfg.n_experts; ++e) {
    const auto& p = profiles[e];
    for (std::size_t k = 0; k < cfg.mentions_per_expert; ++k) {
      ExternalMention m;
      m.mention_id = "M" + std::to_string(e) + "-" + std::to_string(k);
      m.name = names[e];
      m.truth_expert_id = experts[e].id;
      auto sentence = [&] {
        std::string s;
        for (std::size_t t = 0; t < cfg.sentence_tokens; ++t) {
          if (t) s += ' ';
          const double u = unit(rng);
          if (u < cfg.shift) {
            s += synth_word(kShiftBase + shift_pick(rng));
          } else if (u < cfg.shift + (1.0 - cfg.shift) * 0.1) {
            // Occasional affiliation / collaborator mention.
            s += (unit(rng) < 0.5) ? p.org : p.coauthors[0];
          } else {
            s += content_word(p);
          }
        }
        return capitalized(s) + ".";
      };
      const std::size_t before = cfg.sentences_per_side;
      const std::size_t after = cfg.sentences_per_side;
      const std::size_t keep_before = std::min(before, kNewsWindow);
      for (std::size_t i = 0; i < before; ++i) {
        auto s = sentence();
        // Only the window survives ingestion; skip generating the rest.
        if (i + keep_before < before) continue;
        m.support.push_back(
            {SupportKind::kSentence, {{"sentence_before", std::move(s)}}});
      }
      for (std::size_t i = 0; i < std::min(after, kNewsWindow); ++i) {
        m.support.push_back(
            {SupportKind::kSentence, {{"sentence_after", sentence()}}});
      }
      mentions.push_back(std::move(m));
    }
  }
  return {Corpus(std::move(experts)), std::move(mentions)};
}

}  // namespace explink
