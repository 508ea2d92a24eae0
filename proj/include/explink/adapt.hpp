#pragma once

// Adversarial fine-tuning toward an external source: a private generator
// for external items, a domain discriminator behind gradient reversal, an
// orthogonality penalty between shared and private embeddings, and an
// external-task predictor on private embeddings.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "explink/corpus.hpp"
#include "explink/diffcore.hpp"
#include "explink/eval.hpp"
#include "explink/model.hpp"
#include "explink/pretrain.hpp"

namespace explink {

struct AdaptConfig {
  double alpha = 0.1;  // adversarial
  double beta = 0.1;   // difference
  double gamma = 0.1;  // external task
  std::size_t batch_size_ext = 256;
  std::size_t epochs = 1;
  double lr_disc = 1e-3;
  std::size_t max_len_ext = 64;
  std::uint64_t seed = 43;
  // Items per domain in the before/after probe set.
  std::size_t probe_per_domain = 300;

  void validate() const;
};

// Probability clamp for every log inside the adaptation losses.
inline constexpr double kProbClamp = 1e-7;

// Mean over items of (shared_i . private_i)^2.
double difference_loss(std::span<const std::vector<double>> shared,
                       std::span<const std::vector<double>> priv);
Var difference_loss(Tape& tape, std::span<const Var> shared,
                    std::span<const Var> priv);

struct DomainSample {
  Var embedding;
  Source domain = Source::kReference;
};

// Discriminator cross-entropy, mean over the batch, with p = softmax of
// the discriminator logits at the reference class. Embeddings pass through
// gradient reversal with scale `lambda` before the discriminator. Throws
// Error unless both domains are present.
Var adversarial_loss(Tape& tape, const Classifier& disc,
                     std::span<const DomainSample> batch, double lambda = 1.0);

// Mean of -log(1 - p) with p the predictor's reference-class probability.
// Throws Error on an empty batch.
Var external_task_loss(Tape& tape, const Classifier& pred,
                       std::span<const Var> private_embs);

struct LossBreakdown {
  double pre = 0.0;
  double adv = 0.0;
  double diff = 0.0;
  double ext = 0.0;
  double total = 0.0;

  bool operator==(const LossBreakdown&) const = default;
};

// Adam over shared generator and private generator (lr_encoder), metric
// (lr_metric), discriminator and predictor (lr_disc).
Adam make_finetune_optimizer(Model& model, const TrainConfig& train,
                             const AdaptConfig& cfg);

// One combined step: triplet loss on reference triplets through the shared
// generator, adversarial loss on the mixed batch, difference and external
// losses on the external batch. Throws Error naming a non-finite component.
LossBreakdown finetune_step(Model& model, std::span<const TripletBatch> triplets,
                            std::span<const LabeledSupport> mixed,
                            std::span<const SupportInfo> external,
                            const SupportLookup& lookup,
                            const TrainConfig& train, const AdaptConfig& cfg,
                            Adam& optimizer);

struct FinetuneReport {
  std::vector<LossBreakdown> steps;
  double probe_before = 0.0;
  double probe_after = 0.0;
};

using StepCallback = std::function<void(std::size_t step, const LossBreakdown&)>;

// Adds the adaptation heads (private generator copied from the shared one)
// and runs cfg.epochs passes over the external support items in batches of
// batch_size_ext. Each step pairs the external batch with a reference
// triplet batch and an equal number of random reference papers. Probe
// accuracies are measured on held-out shared embeddings before and after.
FinetuneReport finetune(Model& model, const Corpus& reference,
                        std::span<const ExternalMention> external,
                        const TrainConfig& train, const AdaptConfig& cfg,
                        const StepCallback& on_step = {});

// Reference papers and external items labelled by domain, sized for the
// probe: up to `per_domain` of each, chosen with `seed`.
std::vector<LabeledSupport> probe_set(const Corpus& reference,
                                      std::span<const ExternalMention> external,
                                      std::size_t per_domain,
                                      std::uint64_t seed);

}  // namespace explink
