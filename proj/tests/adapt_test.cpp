#include <gtest/gtest.h>

#include <cmath>

#include "explink/adapt.hpp"
#include "explink/error.hpp"
#include "explink/synth.hpp"

using namespace explink;

namespace {

SynthCorpus small_synth(double shift, std::uint64_t seed = 7) {
  SynthConfig cfg;
  cfg.n_experts = 8;
  cfg.papers_per_expert = 12;
  cfg.mentions_per_expert = 3;
  cfg.shift = shift;
  cfg.seed = seed;
  return synth_corpus(cfg);
}

Model small_model(const SynthCorpus& syn, std::uint64_t seed = 1) {
  ModelConfig mc;
  mc.d_tok = 12;
  mc.d_out = 8;
  mc.disc_hidden = 6;
  auto texts = support_texts(syn.reference);
  const auto ext = support_texts(syn.mentions);
  texts.insert(texts.end(), ext.begin(), ext.end());
  return Model(Vocab::build(texts, 1), mc, seed);
}

TrainConfig small_train() {
  TrainConfig cfg;
  cfg.L = 3;
  cfg.n_neg = 3;
  cfg.per_expert = 2;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.lr_encoder = 1e-3;
  return cfg;
}

// 2-d classifier whose reference logit dominates for x0 > 0.
Classifier sharp_classifier(double s) {
  Classifier c("c", 2, 2);
  c.hidden.values = {1, 0, 0, 1};
  c.output.values = {s, -s, 0, 0};
  return c;
}

std::vector<double> snapshot_values(const Model& m) {
  std::vector<double> out;
  for (const auto* p : m.tensors()) out.insert(out.end(), p->values.begin(), p->values.end());
  return out;
}

}  // namespace

TEST(DifferenceLoss, AnalyticValues) {
  auto d = [](std::vector<double> s, std::vector<double> p) {
    const std::vector<std::vector<double>> a{std::move(s)}, b{std::move(p)};
    return difference_loss(a, b);
  };
  EXPECT_EQ(d({1, 0}, {0, 1}), 0.0);
  EXPECT_EQ(d({1, 0}, {1, 0}), 1.0);
  EXPECT_NEAR(d({0.6, 0.8}, {0.8, 0.6}), 0.9216, 1e-12);
}

TEST(DifferenceLoss, OrthogonalFixpointHasZeroGradient) {
  Tape t;
  const Var s[] = {t.input({1.0, 0.0}), t.input({0.0, 1.0})};
  const Var p[] = {t.input({0.0, 1.0}), t.input({-1.0, 0.0})};
  const Var loss = difference_loss(t, s, p);
  EXPECT_EQ(t.scalar_value(loss), 0.0);
  t.backward(loss);
  for (Var v : s) {
    for (double g : t.grad(v)) EXPECT_EQ(g, 0.0);
  }
}

TEST(AdversarialLoss, UniformDiscriminatorGivesLn2) {
  Classifier c("c", 2, 2);  // zero weights: p = 0.5
  Tape t;
  const DomainSample batch[] = {{t.input({1.0, 0.0}), Source::kReference},
                                {t.input({0.0, 1.0}), Source::kExternal}};
  EXPECT_NEAR(t.scalar_value(adversarial_loss(t, c, batch)), std::log(2.0), 1e-12);
}

TEST(AdversarialLoss, PerfectDiscriminatorNearZero) {
  const Classifier c = sharp_classifier(200.0);
  Tape t;
  const DomainSample batch[] = {{t.input({1.0, 0.0}), Source::kReference},
                                {t.input({-1.0, 0.0}), Source::kExternal}};
  EXPECT_LT(t.scalar_value(adversarial_loss(t, c, batch)), 2 * kProbClamp);
}

TEST(AdversarialLoss, NeedsBothDomains) {
  Classifier c("c", 2, 2);
  Tape t;
  const DomainSample batch[] = {{t.input({1.0, 0.0}), Source::kReference}};
  EXPECT_THROW(adversarial_loss(t, c, batch), Error);
}

TEST(AdversarialLoss, ReversalNegatesGeneratorGradient) {
  const auto syn = small_synth(0.5);
  Model model = small_model(syn);
  model.enable_adaptation(3);
  const Tokenizer tok = model.tokenizer();
  const std::vector<SupportInfo> items{syn.reference.experts()[0].support[0],
                                       syn.mentions[0].support[0],
                                       syn.reference.experts()[1].support[0],
                                       syn.mentions[1].support[1]};
  const Source domains[] = {Source::kReference, Source::kExternal, Source::kReference,
                            Source::kExternal};
  auto build = [&](Tape& t) {
    std::vector<DomainSample> batch;
    for (std::size_t i = 0; i < items.size(); ++i) {
      batch.push_back({encode(t, model.shared, tok(items[i])), domains[i]});
    }
    return adversarial_loss(t, model.adapt->discriminator, batch);
  };
  model.adapt->discriminator.hidden.zero_grad();
  model.adapt->discriminator.output.zero_grad();
  ParamTensor& proj = model.shared.projection;
  proj.zero_grad();
  {
    Tape t;
    t.backward(build(t));
  }
  const auto analytic = proj.grad;
  const double eps = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < proj.values.size(); ++i) {
    const double keep = proj.values[i];
    proj.values[i] = keep + eps;
    Tape tp;
    const double up = tp.scalar_value(build(tp));
    proj.values[i] = keep - eps;
    Tape tm;
    const double down = tm.scalar_value(build(tm));
    proj.values[i] = keep;
    const double numeric = (up - down) / (2 * eps);
    // The discriminator is frozen here, so reversal should flip the sign.
    const double rel = std::abs(analytic[i] + numeric) /
                       std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
    worst = std::max(worst, rel);
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(ExternalTaskLoss, AnalyticValuesAndClamp) {
  Tape t;
  const Var e[] = {t.input({1.0, 0.0})};
  Classifier zero("p", 2, 2);
  EXPECT_NEAR(t.scalar_value(external_task_loss(t, zero, e)), std::log(2.0), 1e-12);
  // p(reference) -> 0.
  const Classifier towards_ext = sharp_classifier(-200.0);
  EXPECT_LT(t.scalar_value(external_task_loss(t, towards_ext, e)), 2 * kProbClamp);
  // p(reference) -> 1: clamped.
  const Classifier towards_ref = sharp_classifier(200.0);
  EXPECT_NEAR(t.scalar_value(external_task_loss(t, towards_ref, e)), -std::log(kProbClamp),
              1e-6);
  std::vector<Var> none;
  EXPECT_THROW(external_task_loss(t, zero, none), Error);
}

TEST(AdaptConfig, Validate) {
  AdaptConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.alpha = -0.1;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.batch_size_ext = 0;
  EXPECT_THROW(cfg.validate(), Error);
}

namespace {

struct StepFixture {
  SynthCorpus syn = small_synth(0.5);
  SupportLookup lookup{syn.reference};
  std::vector<TripletBatch> triplets;
  std::vector<LabeledSupport> mixed;
  std::vector<SupportInfo> external;

  StepFixture() {
    Rng rng(9);
    triplets = sample_triplets(syn.reference, small_train().sampling(), rng);
    triplets.resize(1);
    for (std::size_t i = 0; i < 4; ++i) {
      external.push_back(syn.mentions[i].support[0]);
      mixed.push_back({syn.mentions[i].support[0], Source::kExternal});
      mixed.push_back({syn.reference.experts()[i].support[1], Source::kReference});
    }
  }
};

}  // namespace

TEST(FinetuneStep, ZeroWeightsMatchPretrainStepBitwise) {
  StepFixture f;
  Model a = small_model(f.syn);
  Model b = a;
  a.enable_adaptation(5);
  AdaptConfig cfg;
  cfg.alpha = cfg.beta = cfg.gamma = 0.0;
  const TrainConfig train = small_train();
  Adam opt_a = make_finetune_optimizer(a, train, cfg);
  const auto breakdown = finetune_step(a, f.triplets, f.mixed, f.external, f.lookup,
                                       train, cfg, opt_a);
  EXPECT_GT(breakdown.adv, 0.0);
  EXPECT_GT(breakdown.diff, 0.0);
  EXPECT_GT(breakdown.ext, 0.0);
  EXPECT_EQ(breakdown.total, breakdown.pre);

  Adam opt_b = make_pretrain_optimizer(b, train);
  Rng rng(1);
  pretrain_epoch(b, f.triplets, f.lookup, train, opt_b, rng);
  EXPECT_EQ(a.shared.embedding.values, b.shared.embedding.values);
  EXPECT_EQ(a.shared.projection.values, b.shared.projection.values);
  EXPECT_EQ(a.metric.hidden.values, b.metric.hidden.values);
  EXPECT_EQ(a.metric.output.values, b.metric.output.values);
}

TEST(FinetuneStep, TotalIsWeightedSumAndDeterministic) {
  StepFixture f;
  Model base = small_model(f.syn);
  base.enable_adaptation(5);
  const AdaptConfig cfg;
  const TrainConfig train = small_train();
  Model a = base, b = base;
  Adam opt_a = make_finetune_optimizer(a, train, cfg);
  Adam opt_b = make_finetune_optimizer(b, train, cfg);
  const auto ra = finetune_step(a, f.triplets, f.mixed, f.external, f.lookup, train, cfg, opt_a);
  const auto rb = finetune_step(b, f.triplets, f.mixed, f.external, f.lookup, train, cfg, opt_b);
  EXPECT_EQ(ra, rb);
  EXPECT_NEAR(ra.total, ra.pre + 0.1 * (ra.adv + ra.diff + ra.ext), 1e-15);
  EXPECT_GE(ra.pre, 0.0);
  EXPECT_GE(ra.adv, 0.0);
  EXPECT_GE(ra.diff, 0.0);
  EXPECT_GE(ra.ext, 0.0);
  EXPECT_TRUE(a.same_parameters(b));
  EXPECT_FALSE(a.same_parameters(base));
}

TEST(FinetuneStep, RequiresHeadsAndBatches) {
  StepFixture f;
  Model m = small_model(f.syn);
  const TrainConfig train = small_train();
  const AdaptConfig cfg;
  Adam opt = make_pretrain_optimizer(m, train);
  EXPECT_THROW(finetune_step(m, f.triplets, f.mixed, f.external, f.lookup, train, cfg, opt),
               Error);
  m.enable_adaptation(1);
  std::vector<SupportInfo> none;
  EXPECT_THROW(finetune_step(m, f.triplets, f.mixed, none, f.lookup, train, cfg, opt), Error);
}

TEST(Finetune, ZeroEpochsLeavesModelUnchanged) {
  const auto syn = small_synth(0.5);
  Model m = small_model(syn);
  const auto before = snapshot_values(m);
  AdaptConfig cfg;
  cfg.epochs = 0;
  cfg.probe_per_domain = 40;
  const auto report = finetune(m, syn.reference, syn.mentions, small_train(), cfg);
  EXPECT_TRUE(report.steps.empty());
  EXPECT_EQ(snapshot_values(m), before);
}

TEST(Finetune, DeterministicAndReportsSteps) {
  const auto syn = small_synth(0.5);
  AdaptConfig cfg;
  cfg.batch_size_ext = 32;
  cfg.probe_per_domain = 40;
  Model a = small_model(syn), b = small_model(syn);
  std::size_t calls = 0;
  const auto ra = finetune(a, syn.reference, syn.mentions, small_train(), cfg,
                           [&](std::size_t, const LossBreakdown&) { ++calls; });
  const auto rb = finetune(b, syn.reference, syn.mentions, small_train(), cfg);
  std::size_t n_items = 0;
  for (const auto& m : syn.mentions) n_items += m.support.size();
  EXPECT_EQ(ra.steps.size(), (n_items + 31) / 32);
  EXPECT_EQ(calls, ra.steps.size());
  EXPECT_EQ(ra.steps, rb.steps);
  EXPECT_EQ(ra.probe_after, rb.probe_after);
  EXPECT_TRUE(a.same_parameters(b));
  ASSERT_TRUE(a.adapt.has_value());
}

TEST(Finetune, IndistinguishableDomainsProbeNearChance) {
  // External items drawn from the same distribution as reference papers.
  SynthConfig sc;
  sc.n_experts = 16;
  sc.papers_per_expert = 24;
  sc.mentions_per_expert = 1;
  sc.seed = 3;
  const auto syn = synth_corpus(sc);
  std::vector<Expert> ref;
  std::vector<ExternalMention> ext;
  for (const auto& e : syn.reference.experts()) {
    Expert r = e;
    r.support.resize(12);
    ref.push_back(r);
    ExternalMention m{"m-" + e.id, e.name, {e.support.begin() + 12, e.support.end()}, e.id};
    ext.push_back(m);
  }
  const Corpus reference(ref);
  SynthCorpus mirror{reference, ext};
  Model m = small_model(mirror);
  AdaptConfig cfg;
  cfg.batch_size_ext = 64;
  cfg.probe_per_domain = 150;
  const auto report = finetune(m, reference, ext, small_train(), cfg);
  EXPECT_LT(std::abs(report.probe_before - 0.5), 0.15);
  EXPECT_LT(std::abs(report.probe_after - 0.5), 0.15);
}

TEST(ProbeSet, BalancedAndSeeded) {
  const auto syn = small_synth(0.5);
  const auto a = probe_set(syn.reference, syn.mentions, 20, 4);
  const auto b = probe_set(syn.reference, syn.mentions, 20, 4);
  ASSERT_EQ(a.size(), 40u);
  std::size_t ext = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ext += a[i].domain == Source::kExternal;
    EXPECT_EQ(a[i].info, b[i].info);
  }
  EXPECT_EQ(ext, 20u);
}
