#pragma once

// Support-information encoder: vocabulary, tokenization, and a trainable
// generator (mean-pooled token embeddings -> tanh projection -> unit norm).

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "explink/corpus.hpp"
#include "explink/diffcore.hpp"

namespace explink {

// Lowercased alphanumeric runs; bytes >= 0x80 count as word characters so
// UTF-8 text stays intact.
std::vector<std::string> split_tokens(std::string_view text);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;

  Vocab();

  // Ids assigned by descending frequency, then lexicographically. Tokens
  // seen fewer than `min_freq` times are left out and map to UNK.
  static Vocab build(std::span<const std::string> documents,
                     std::size_t min_freq);

  int id(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }

  // One token per line; the id is the line number.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Texts of every support item, for vocabulary construction.
std::vector<std::string> support_texts(const Corpus& corpus);
std::vector<std::string> support_texts(
    std::span<const ExternalMention> mentions);

// Concatenated text of the tokenized fields (year excluded).
std::string support_text(const SupportInfo& info);

// Maximum token counts, CLS and SEP included.
struct TokenLimits {
  std::size_t paper = 208;
  std::size_t external = 64;

  std::size_t for_kind(SupportKind kind) const {
    return kind == SupportKind::kPaper ? paper : external;
  }
};

// [CLS] field tokens... [SEP], truncated to max_len keeping both markers.
std::vector<int> tokenize(const SupportInfo& info, const Vocab& vocab,
                          std::size_t max_len);

struct GeneratorParams {
  GeneratorParams() = default;
  GeneratorParams(const std::string& prefix, std::size_t vocab_size,
                  std::size_t d_tok, std::size_t d_out);

  ParamTensor embedding;   // vocab_size x d_tok
  ParamTensor projection;  // d_tok x d_out

  std::size_t d_tok() const { return embedding.cols; }
  std::size_t d_out() const { return projection.cols; }

  // Embedding table ~ U(-0.05, 0.05); projection Xavier-uniform.
  void init(Rng& rng);
  // Copies values from another generator of identical shape.
  void copy_values_from(const GeneratorParams& other);

  std::vector<ParamTensor*> tensors();
  std::vector<const ParamTensor*> tensors() const;

  bool operator==(const GeneratorParams&) const = default;
};

// Mean of non-PAD token embeddings. Throws Error when every id is PAD.
Var embed_mean(Tape& tape, const ParamTensor& table, std::span<const int> ids);

// Unit-length embedding of a token sequence.
Var encode(Tape& tape, const GeneratorParams& gen, std::span<const int> ids);
std::vector<double> encode(const GeneratorParams& gen,
                           std::span<const int> ids);

// Tokenizes support items with a fixed vocabulary and limits.
class Tokenizer {
 public:
  Tokenizer(const Vocab& vocab, TokenLimits limits)
      : vocab_(&vocab), limits_(limits) {}

  std::vector<int> operator()(const SupportInfo& info) const {
    return tokenize(info, *vocab_, limits_.for_kind(info.kind));
  }

  const Vocab& vocab() const { return *vocab_; }
  TokenLimits limits() const { return limits_; }

 private:
  const Vocab* vocab_;
  TokenLimits limits_;
};

// One embedding per instance item, in order. Throws Error on an index
// outside the owner's support list.
std::vector<Var> encode_instance(Tape& tape, const GeneratorParams& gen,
                                 const ExpertInstance& instance,
                                 const SupportLookup& lookup,
                                 const Tokenizer& tokenizer);

std::vector<Var> encode_items(Tape& tape, const GeneratorParams& gen,
                              std::span<const SupportInfo> items,
                              const Tokenizer& tokenizer);

// Frozen per-item vectors computed elsewhere, e.g. by a transformer.
// File lines are "id<TAB>v1,v2,...,vd"; vectors are L2-normalized on load.
class ImportedEmbeddings {
 public:
  static ImportedEmbeddings load(const std::filesystem::path& path,
                                 std::size_t d_out);

  // Throws Error for unknown ids.
  const std::vector<double>& lookup(std::string_view item_id) const;
  bool contains(std::string_view item_id) const;
  std::size_t size() const { return vectors_.size(); }
  std::size_t dim() const { return dim_; }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::vector<double>> vectors_;
};

// Item id used by embedding files: "<owner_id>#<index>".
std::string item_id(std::string_view owner_id, std::size_t index);

}  // namespace explink
