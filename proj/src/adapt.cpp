#include "explink/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "explink/encoder.hpp"
#include "explink/error.hpp"

namespace explink {

void AdaptConfig::validate() const {
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) {
    throw Error("adapt config: loss weights must be >= 0");
  }
  if (batch_size_ext == 0) throw Error("adapt config: batch_size_ext must be > 0");
  if (!(lr_disc > 0.0)) throw Error("adapt config: lr_disc must be > 0");
  if (max_len_ext < 3) throw Error("adapt config: max_len_ext must be >= 3");
}

double difference_loss(std::span<const std::vector<double>> shared,
                       std::span<const std::vector<double>> priv) {
  if (shared.size() != priv.size()) {
    throw Error("difference_loss: " + std::to_string(shared.size()) +
                " shared vs " + std::to_string(priv.size()) +
                " private embeddings");
  }
  if (shared.empty()) throw Error("difference_loss: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < shared.size(); ++i) {
    if (shared[i].size() != priv[i].size()) {
      throw Error("difference_loss: dimension mismatch at item " +
                  std::to_string(i));
    }
    double d = 0.0;
    for (std::size_t t = 0; t < shared[i].size(); ++t) {
      d += shared[i][t] * priv[i][t];
    }
    total += d * d;
  }
  return total / static_cast<double>(shared.size());
}

Var difference_loss(Tape& tape, std::span<const Var> shared,
                    std::span<const Var> priv) {
  if (shared.size() != priv.size()) {
    throw Error("difference_loss: " + std::to_string(shared.size()) +
                " shared vs " + std::to_string(priv.size()) +
                " private embeddings");
  }
  if (shared.empty()) throw Error("difference_loss: empty batch");
  std::vector<Var> terms;
  terms.reserve(shared.size());
  for (std::size_t i = 0; i < shared.size(); ++i) {
    terms.push_back(tape.square(tape.dot(shared[i], priv[i])));
  }
  return tape.mean(terms);
}

Var adversarial_loss(Tape& tape, const Classifier& disc,
                     std::span<const DomainSample> batch, double lambda) {
  bool has_ref = false;
  bool has_ext = false;
  for (const auto& s : batch) {
    (s.domain == Source::kReference ? has_ref : has_ext) = true;
  }
  if (!has_ref || !has_ext) {
    throw Error("adversarial_loss: batch needs both reference and external items");
  }
  std::vector<Var> logs;
  logs.reserve(batch.size());
  for (const auto& s : batch) {
    Var logits = disc.logits(tape, tape.grad_reverse(s.embedding, lambda));
    // With two classes, 1 - p(reference) is p(external).
    const std::size_t cls =
        s.domain == Source::kReference ? kReferenceClass : kExternalClass;
    logs.push_back(tape.log_softmax_prob(logits, cls, kProbClamp));
  }
  return tape.scale(tape.mean(logs), -1.0);
}

Var external_task_loss(Tape& tape, const Classifier& pred,
                       std::span<const Var> private_embs) {
  if (private_embs.empty()) throw Error("external_task_loss: empty batch");
  std::vector<Var> logs;
  logs.reserve(private_embs.size());
  for (Var e : private_embs) {
    logs.push_back(
        tape.log_softmax_prob(pred.logits(tape, e), kExternalClass, kProbClamp));
  }
  return tape.scale(tape.mean(logs), -1.0);
}

Adam make_finetune_optimizer(Model& model, const TrainConfig& train,
                             const AdaptConfig& cfg) {
  if (!model.adapt) throw Error("finetune: model has no adaptation heads");
  AdamOptions opts;
  opts.decay = train.decay;
  std::vector<ParamTensor*> heads = model.adapt->discriminator.tensors();
  for (auto* p : model.adapt->predictor.tensors()) heads.push_back(p);
  return Adam({{model.shared.tensors(), train.lr_encoder},
               {model.metric.tensors(), train.lr_metric},
               {model.adapt->private_gen.tensors(), train.lr_encoder},
               {heads, cfg.lr_disc}},
              opts);
}

LossBreakdown finetune_step(Model& model, std::span<const TripletBatch> triplets,
                            std::span<const LabeledSupport> mixed,
                            std::span<const SupportInfo> external,
                            const SupportLookup& lookup,
                            const TrainConfig& train, const AdaptConfig& cfg,
                            Adam& optimizer) {
  if (!model.adapt) throw Error("finetune_step: model has no adaptation heads");
  if (triplets.empty() || mixed.empty() || external.empty()) {
    throw Error("finetune_step: every batch must be non-empty");
  }
  const Tokenizer tokenizer = model.tokenizer();
  const AdaptParams& heads = *model.adapt;

  Tape tape;
  Var pre = triplet_batch_loss(tape, model.shared, model.metric, triplets,
                               lookup, tokenizer, train.margin);

  std::vector<DomainSample> domain_batch;
  domain_batch.reserve(mixed.size());
  for (const auto& item : mixed) {
    domain_batch.push_back(
        {encode(tape, model.shared, tokenizer(item.info)), item.domain});
  }
  Var adv = adversarial_loss(tape, heads.discriminator, domain_batch);

  const auto shared = encode_items(tape, model.shared, external, tokenizer);
  const auto priv = encode_items(tape, heads.private_gen, external, tokenizer);
  Var diff = difference_loss(tape, shared, priv);
  Var ext = external_task_loss(tape, heads.predictor, priv);

  LossBreakdown out;
  out.pre = tape.scalar_value(pre);
  out.adv = tape.scalar_value(adv);
  out.diff = tape.scalar_value(diff);
  out.ext = tape.scalar_value(ext);
  const std::pair<const char*, double> parts[] = {
      {"pre", out.pre}, {"adv", out.adv}, {"diff", out.diff}, {"ext", out.ext}};
  for (const auto& [name, value] : parts) {
    if (!std::isfinite(value)) {
      throw Error(std::string("finetune_step: non-finite ") + name + " loss");
    }
  }

  // Zero-weight terms stay out of the graph so the update matches a plain
  // triplet step exactly.
  Var total = pre;
  const std::pair<double, Var> weighted[] = {
      {cfg.alpha, adv}, {cfg.beta, diff}, {cfg.gamma, ext}};
  for (const auto& [w, v] : weighted) {
    if (w != 0.0) total = tape.add(total, tape.scale(v, w));
  }
  out.total = out.pre + cfg.alpha * out.adv + cfg.beta * out.diff +
              cfg.gamma * out.ext;
  tape.backward(total);
  optimizer.step();
  return out;
}

std::vector<LabeledSupport> probe_set(const Corpus& reference,
                                      std::span<const ExternalMention> external,
                                      std::size_t per_domain,
                                      std::uint64_t seed) {
  Rng rng = derive_rng(seed, 3);
  auto take = [&](std::vector<const SupportInfo*> pool, Source domain,
                  std::vector<LabeledSupport>& out) {
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(std::min(pool.size(), per_domain));
    for (const auto* info : pool) out.push_back({*info, domain});
  };
  std::vector<const SupportInfo*> ref;
  for (const auto& e : reference.experts()) {
    for (const auto& s : e.support) ref.push_back(&s);
  }
  std::vector<const SupportInfo*> ext;
  for (const auto& m : external) {
    for (const auto& s : m.support) ext.push_back(&s);
  }
  std::vector<LabeledSupport> out;
  take(std::move(ref), Source::kReference, out);
  take(std::move(ext), Source::kExternal, out);
  return out;
}

FinetuneReport finetune(Model& model, const Corpus& reference,
                        std::span<const ExternalMention> external,
                        const TrainConfig& train, const AdaptConfig& cfg,
                        const StepCallback& on_step) {
  train.validate();
  cfg.validate();
  std::vector<SupportInfo> ext_items;
  for (const auto& m : external) {
    ext_items.insert(ext_items.end(), m.support.begin(), m.support.end());
  }
  if (ext_items.empty()) throw Error("finetune: external corpus is empty");

  FinetuneReport report;
  model.config.limits.external = cfg.max_len_ext;
  const auto probes =
      probe_set(reference, external, cfg.probe_per_domain, cfg.seed);
  report.probe_before =
      discriminator_probe(model.shared, model.tokenizer(), probes);
  if (cfg.epochs == 0) {
    report.probe_after = report.probe_before;
    return report;
  }

  model.enable_adaptation(cfg.seed);
  Adam optimizer = make_finetune_optimizer(model, train, cfg);
  const SupportLookup lookup(reference);
  Rng rng = derive_rng(cfg.seed, 2);

  std::vector<std::pair<std::size_t, std::size_t>> ref_papers;
  for (std::size_t e = 0; e < reference.size(); ++e) {
    for (std::size_t i = 0; i < reference.experts()[e].support.size(); ++i) {
      ref_papers.emplace_back(e, i);
    }
  }
  std::uniform_int_distribution<std::size_t> pick_paper(0, ref_papers.size() - 1);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng sample_rng = derive_rng(train.seed, 2000 + epoch);
    auto triplets = sample_triplets(reference, train.sampling(), sample_rng);
    std::shuffle(triplets.begin(), triplets.end(), rng);
    std::size_t next_triplet = 0;

    std::vector<std::size_t> order(ext_items.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size_ext) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size_ext);
      std::vector<SupportInfo> ext_batch;
      std::vector<LabeledSupport> mixed;
      for (std::size_t i = start; i < end; ++i) {
        ext_batch.push_back(ext_items[order[i]]);
        mixed.push_back({ext_items[order[i]], Source::kExternal});
      }
      for (std::size_t i = start; i < end; ++i) {
        const auto [e, k] = ref_papers[pick_paper(rng)];
        mixed.push_back({reference.experts()[e].support[k], Source::kReference});
      }
      std::vector<TripletBatch> tb;
      for (std::size_t i = 0; i < train.batch_size; ++i) {
        tb.push_back(triplets[next_triplet++ % triplets.size()]);
      }
      const LossBreakdown b = finetune_step(model, tb, mixed, ext_batch, lookup,
                                            train, cfg, optimizer);
      report.steps.push_back(b);
      if (on_step) on_step(step, b);
      ++step;
    }
    optimizer.decay_epoch();
  }
  report.probe_after =
      discriminator_probe(model.shared, model.tokenizer(), probes);
  return report;
}

}  // namespace explink
