#pragma once

// Expert-discrimination pre-training with a margin triplet loss.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "explink/corpus.hpp"
#include "explink/diffcore.hpp"
#include "explink/model.hpp"

namespace explink {

struct TrainConfig {
  std::size_t L = 6;
  std::size_t n_neg = 9;
  double margin = 1.0;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  double lr_encoder = 2e-5;
  double lr_metric = 2e-3;
  double decay = 0.96;
  std::uint64_t seed = 42;
  std::size_t max_len_paper = 208;
  std::size_t per_expert = 10;

  // Throws Error when a field is out of range (non-positive, margin >= 2).
  void validate() const;
  TripletSampling sampling() const { return {L, n_neg, per_expert}; }
};

struct EpochStats {
  double loss = 0.0;
  double violation_rate = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

// sum over negatives of max(0, m + f(e, e-) - f(e, e+)).
double triplet_loss(double score_pos, std::span<const double> score_negs,
                    double margin);
Var triplet_loss(Tape& tape, Var score_pos, std::span<const Var> score_negs,
                 double margin);

struct BatchStats {
  double loss = 0.0;
  std::size_t violations = 0;
  std::size_t pairs = 0;
};

// Mean over anchors of the per-anchor triplet loss, with every instance
// encoded by `gen` and scored by `metric` (anchor as first argument).
Var triplet_batch_loss(Tape& tape, const GeneratorParams& gen,
                       const MetricParams& metric,
                       std::span<const TripletBatch> batch,
                       const SupportLookup& lookup, const Tokenizer& tokenizer,
                       double margin, BatchStats* stats = nullptr);

// Adam over the shared generator (lr_encoder) and metric (lr_metric).
Adam make_pretrain_optimizer(Model& model, const TrainConfig& cfg);

// One pass over shuffled minibatches. Throws Error on a non-finite loss.
EpochStats pretrain_epoch(Model& model, std::span<const TripletBatch> triplets,
                          const SupportLookup& lookup, const TrainConfig& cfg,
                          Adam& optimizer, Rng& rng);

using EpochCallback = std::function<void(std::size_t epoch, const EpochStats&)>;

// Resamples triplets every epoch, decays learning rates at epoch
// boundaries and leaves the model at its lowest-loss epoch.
TrainHistory pretrain(Model& model, const Corpus& corpus,
                      const TrainConfig& cfg,
                      const EpochCallback& on_epoch = {});

// Independent random stream for (seed, stream).
Rng derive_rng(std::uint64_t seed, std::uint64_t stream);

}  // namespace explink
