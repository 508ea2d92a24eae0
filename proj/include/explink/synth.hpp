#pragma once

// Synthetic reference/external corpora with planted structure: every
// expert owns a dominant topic vocabulary, experts are grouped under
// colliding names, and external mentions may carry a vocabulary shift.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "explink/corpus.hpp"

namespace explink {

struct SynthConfig {
  std::size_t n_experts = 50;
  std::size_t papers_per_expert = 24;
  // Dominant topic tokens owned by each expert.
  std::size_t topic_vocab = 40;
  // Tokens shared by every expert.
  std::size_t background_vocab = 200;
  // Fraction of content tokens drawn from the shared background.
  double overlap = 0.2;
  // Experts per colliding name; the candidate list size of a mention.
  std::size_t name_group_size = 4;
  std::size_t mentions_per_expert = 2;
  std::size_t sentences_per_side = 8;
  std::size_t sentence_tokens = 10;
  // Fraction of external tokens replaced by an external-only vocabulary.
  double shift = 0.0;
  std::size_t shift_vocab = 100;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SynthCorpus {
  Corpus reference;
  std::vector<ExternalMention> mentions;
};

SynthCorpus synth_corpus(const SynthConfig& cfg);

// Pseudo-word for a global index; distinct indices give distinct words.
std::string synth_word(std::size_t index);

}  // namespace explink
