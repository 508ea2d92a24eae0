#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "explink/diffcore.hpp"
#include "explink/encoder.hpp"
#include "explink/metric.hpp"

namespace explink {

// Two-layer domain classifier: W2^T leaky_relu(W1^T x), logits over
// {reference, external}.
struct Classifier {
  Classifier() = default;
  Classifier(const std::string& prefix, std::size_t d_in, std::size_t d_hidden);

  ParamTensor hidden;  // d_in x d_hidden
  ParamTensor output;  // d_hidden x 2

  void init(Rng& rng);
  Var logits(Tape& tape, Var x) const;
  std::vector<ParamTensor*> tensors();
  std::vector<const ParamTensor*> tensors() const;
};

inline constexpr std::size_t kReferenceClass = 0;
inline constexpr std::size_t kExternalClass = 1;

struct AdaptParams {
  GeneratorParams private_gen;
  Classifier discriminator;
  Classifier predictor;
};

struct ModelConfig {
  std::size_t d_tok = 64;
  std::size_t d_out = 64;
  std::size_t disc_hidden = 100;
  TokenLimits limits;
};

// Shared generator + metric, plus the adaptation heads once fine-tuned.
class Model {
 public:
  Model() = default;
  Model(Vocab vocab, ModelConfig config, std::uint64_t seed);

  Vocab vocab;
  ModelConfig config;
  GeneratorParams shared;
  MetricParams metric;
  std::optional<AdaptParams> adapt;
  int version = 1;

  Tokenizer tokenizer() const { return Tokenizer(vocab, config.limits); }

  // Creates the private generator (copied from the shared one) and
  // freshly initialized discriminator and predictor.
  void enable_adaptation(std::uint64_t seed);

  std::vector<ParamTensor*> tensors();
  std::vector<const ParamTensor*> tensors() const;

  // Directory with model.json, vocab.txt and params.ckpt.
  void save(const std::filesystem::path& dir) const;
  static Model load(const std::filesystem::path& dir);

  // Unit embedding of one support item via the shared generator.
  std::vector<double> embed(const SupportInfo& info) const;

  bool same_parameters(const Model& other) const;
};

}  // namespace explink
