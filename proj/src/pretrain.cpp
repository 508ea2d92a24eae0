#include "explink/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "explink/encoder.hpp"
#include "explink/error.hpp"
#include "explink/metric.hpp"

namespace explink {

void TrainConfig::validate() const {
  if (L == 0 || n_neg == 0 || batch_size == 0 || per_expert == 0) {
    throw Error("train config: L, n_neg, batch_size and per_expert must be > 0");
  }
  if (!(margin > 0.0) || !(margin < 2.0)) {
    throw Error("train config: margin must be in (0, 2)");
  }
  if (!(lr_encoder > 0.0) || !(lr_metric > 0.0)) {
    throw Error("train config: learning rates must be > 0");
  }
  if (!(decay > 0.0) || decay > 1.0) {
    throw Error("train config: decay must be in (0, 1]");
  }
  if (max_len_paper < 3) throw Error("train config: max_len_paper must be >= 3");
}

double triplet_loss(double score_pos, std::span<const double> score_negs,
                    double margin) {
  double total = 0.0;
  for (double neg : score_negs) {
    total += std::max(0.0, margin + neg - score_pos);
  }
  return total;
}

Var triplet_loss(Tape& tape, Var score_pos, std::span<const Var> score_negs,
                 double margin) {
  std::vector<Var> hinges;
  hinges.reserve(score_negs.size());
  for (Var neg : score_negs) {
    hinges.push_back(
        tape.relu(tape.add_scalar(tape.sub(neg, score_pos), margin)));
  }
  return tape.sum(hinges);
}

Var triplet_batch_loss(Tape& tape, const GeneratorParams& gen,
                       const MetricParams& metric,
                       std::span<const TripletBatch> batch,
                       const SupportLookup& lookup, const Tokenizer& tokenizer,
                       double margin, BatchStats* stats) {
  if (batch.empty()) throw Error("triplet_batch_loss: empty batch");
  std::vector<Var> per_anchor;
  per_anchor.reserve(batch.size());
  for (const auto& t : batch) {
    const auto anchor = encode_instance(tape, gen, t.anchor, lookup, tokenizer);
    const auto positive =
        encode_instance(tape, gen, t.positive, lookup, tokenizer);
    Var pos = score(tape, metric, anchor, positive);
    std::vector<Var> negs;
    negs.reserve(t.negatives.size());
    for (const auto& n : t.negatives) {
      const auto neg = encode_instance(tape, gen, n, lookup, tokenizer);
      negs.push_back(score(tape, metric, anchor, neg));
    }
    Var loss = triplet_loss(tape, pos, negs, margin);
    per_anchor.push_back(loss);
    if (stats) {
      const double p = tape.scalar_value(pos);
      for (Var n : negs) {
        if (margin + tape.scalar_value(n) - p > 0.0) ++stats->violations;
        ++stats->pairs;
      }
    }
  }
  Var mean = tape.mean(per_anchor);
  if (stats) stats->loss = tape.scalar_value(mean);
  return mean;
}

Adam make_pretrain_optimizer(Model& model, const TrainConfig& cfg) {
  AdamOptions opts;
  opts.decay = cfg.decay;
  return Adam({{model.shared.tensors(), cfg.lr_encoder},
               {model.metric.tensors(), cfg.lr_metric}},
              opts);
}

EpochStats pretrain_epoch(Model& model, std::span<const TripletBatch> triplets,
                          const SupportLookup& lookup, const TrainConfig& cfg,
                          Adam& optimizer, Rng& rng) {
  if (triplets.empty()) throw Error("pretrain_epoch: no triplets");
  std::vector<std::size_t> order(triplets.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  const Tokenizer tokenizer = model.tokenizer();
  double loss_sum = 0.0;
  std::size_t batches = 0;
  std::size_t violations = 0;
  std::size_t pairs = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_size);
    std::vector<TripletBatch> batch;
    batch.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) batch.push_back(triplets[order[i]]);

    Tape tape;
    BatchStats stats;
    Var loss = triplet_batch_loss(tape, model.shared, model.metric, batch,
                                  lookup, tokenizer, cfg.margin, &stats);
    if (!std::isfinite(stats.loss)) {
      throw Error("pretrain_epoch: non-finite loss in batch " +
                  std::to_string(batches) + " (triplets " +
                  std::to_string(start) + ".." + std::to_string(end - 1) + ")");
    }
    tape.backward(loss);
    optimizer.step();
    loss_sum += stats.loss;
    violations += stats.violations;
    pairs += stats.pairs;
    ++batches;
  }
  return {loss_sum / static_cast<double>(batches),
          pairs ? static_cast<double>(violations) / static_cast<double>(pairs)
                : 0.0};
}

Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

TrainHistory pretrain(Model& model, const Corpus& corpus,
                      const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  TrainHistory history;
  if (cfg.epochs == 0) return history;
  // Fail early on ineligible corpora.
  {
    Rng probe = derive_rng(cfg.seed, 0);
    TripletSampling s = cfg.sampling();
    s.per_expert = 1;
    (void)sample_triplets(corpus, s, probe);
  }

  const SupportLookup lookup(corpus);
  Adam optimizer = make_pretrain_optimizer(model, cfg);
  Rng shuffle_rng = derive_rng(cfg.seed, 1);

  Model best = model;
  double best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng sample_rng = derive_rng(cfg.seed, 1000 + epoch);
    const auto triplets = sample_triplets(corpus, cfg.sampling(), sample_rng);
    const EpochStats stats =
        pretrain_epoch(model, triplets, lookup, cfg, optimizer, shuffle_rng);
    optimizer.decay_epoch();
    history.epochs.push_back(stats);
    if (on_epoch) on_epoch(epoch, stats);
    if (stats.loss < best_loss) {
      best_loss = stats.loss;
      best = model;
    }
  }
  model = std::move(best);
  return history;
}

}  // namespace explink
