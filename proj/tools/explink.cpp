// Command-line entry point: synth, pretrain, finetune, eval-ai, eval-pc,
// link, serve, sweep, export-embeddings.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "explink/adapt.hpp"
#include "explink/corpus.hpp"
#include "explink/encoder.hpp"
#include "explink/error.hpp"
#include "explink/eval.hpp"
#include "explink/linker.hpp"
#include "explink/manifest.hpp"
#include "explink/model.hpp"
#include "explink/pretrain.hpp"
#include "explink/service.hpp"
#include "explink/synth.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace explink;

namespace {

struct TrainFlags {
  TrainConfig train;
  ModelConfig model;
  std::size_t min_freq = 1;
  std::string external_vocab;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--epochs", f.train.epochs, "Pre-training epochs");
  cmd->add_option("--L", f.train.L, "Papers per sampled instance");
  cmd->add_option("--n-neg", f.train.n_neg, "Negatives per anchor");
  cmd->add_option("--margin", f.train.margin, "Triplet margin");
  cmd->add_option("--batch-size", f.train.batch_size, "Triplets per step");
  cmd->add_option("--per-expert", f.train.per_expert, "Anchors per expert per epoch");
  cmd->add_option("--lr-encoder", f.train.lr_encoder, "Generator learning rate");
  cmd->add_option("--lr-metric", f.train.lr_metric, "Metric learning rate");
  cmd->add_option("--decay", f.train.decay, "Per-epoch learning-rate decay");
  cmd->add_option("--seed", f.train.seed, "Random seed");
  cmd->add_option("--max-len-paper", f.train.max_len_paper, "Paper token limit");
  cmd->add_option("--d-tok", f.model.d_tok, "Token embedding size");
  cmd->add_option("--d-out", f.model.d_out, "Item embedding size");
  cmd->add_option("--min-freq", f.min_freq, "Vocabulary frequency cutoff");
  cmd->add_option("--vocab-external", f.external_vocab,
                  "News mentions whose text also feeds the vocabulary");
}

json train_json(const TrainFlags& f) {
  const auto& t = f.train;
  return {{"epochs", t.epochs},           {"L", t.L},
          {"n_neg", t.n_neg},             {"margin", t.margin},
          {"batch_size", t.batch_size},   {"per_expert", t.per_expert},
          {"lr_encoder", t.lr_encoder},   {"lr_metric", t.lr_metric},
          {"decay", t.decay},             {"seed", t.seed},
          {"max_len_paper", t.max_len_paper}, {"d_tok", f.model.d_tok},
          {"d_out", f.model.d_out},       {"min_freq", f.min_freq}};
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

class JsonlLog {
 public:
  explicit JsonlLog(const fs::path& path) {
    fs::create_directories(path.parent_path());
    out_.open(path);
    if (!out_) throw Error("cannot write '" + path.string() + "'");
  }
  void write(const json& j) { out_ << j.dump() << '\n' << std::flush; }

 private:
  std::ofstream out_;
};

Model init_model(const Corpus& corpus, TrainFlags& f) {
  auto texts = support_texts(corpus);
  if (!f.external_vocab.empty()) {
    const auto mentions = load_mentions(f.external_vocab, Schema::kNews);
    auto more = support_texts(mentions);
    texts.insert(texts.end(), more.begin(), more.end());
  }
  ModelConfig cfg = f.model;
  cfg.limits.paper = f.train.max_len_paper;
  return Model(Vocab::build(texts, f.min_freq), cfg, f.train.seed);
}

Model train_model(const Corpus& corpus, TrainFlags& f, const fs::path& log) {
  Model model = init_model(corpus, f);
  JsonlLog train_log(log);
  pretrain(model, corpus, f.train, [&](std::size_t epoch, const EpochStats& s) {
    train_log.write(
        {{"epoch", epoch}, {"loss", s.loss}, {"violation_rate", s.violation_rate}});
  });
  return model;
}

json ranking_json(const RankingReport& r) {
  return {{"hr1", r.hr(1)}, {"hr3", r.hr(3)}, {"mrr", r.mrr},
          {"n_queries", r.n_queries}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expert linking: pre-training, adaptation, evaluation, serving"};
  app.require_subcommand(1);

  std::string out_dir;
  std::string corpus_path;
  std::string external_path;
  std::string queries_path;
  std::string model_dir;
  std::string schema_name = "news";

  // synth
  SynthConfig sc;
  std::size_t holdout = 4;
  std::size_t n_candidates = 18;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--n-experts", sc.n_experts);
  synth->add_option("--papers", sc.papers_per_expert, "Papers per expert");
  synth->add_option("--topic-vocab", sc.topic_vocab, "Topic words per expert");
  synth->add_option("--background-vocab", sc.background_vocab);
  synth->add_option("--overlap", sc.overlap, "Background token fraction");
  synth->add_option("--name-group", sc.name_group_size, "Experts per colliding name");
  synth->add_option("--mentions", sc.mentions_per_expert, "Mentions per expert");
  synth->add_option("--shift", sc.shift, "External vocabulary shift in [0,1)");
  synth->add_option("--holdout", holdout, "Query papers held out per expert");
  synth->add_option("--candidates", n_candidates, "Candidates per query");
  synth->add_option("--seed", sc.seed);

  // pretrain
  TrainFlags tf;
  auto* pre = app.add_subcommand("pretrain", "Pre-train encoder and metric");
  pre->add_option("--corpus", corpus_path, "Reference corpus")->required();
  pre->add_option("--out", out_dir, "Run directory")->required();
  add_train_flags(pre, tf);

  // finetune
  AdaptConfig ac;
  TrainConfig ft;
  auto* fine = app.add_subcommand("finetune", "Adversarial fine-tuning");
  fine->add_option("--model", model_dir, "Pre-trained checkpoint")->required();
  fine->add_option("--corpus", corpus_path, "Reference corpus")->required();
  fine->add_option("--external", external_path, "External mentions")->required();
  fine->add_option("--schema", schema_name, "news or linkedin");
  fine->add_option("--out", out_dir, "Run directory")->required();
  fine->add_option("--alpha", ac.alpha);
  fine->add_option("--beta", ac.beta);
  fine->add_option("--gamma", ac.gamma);
  fine->add_option("--epochs", ac.epochs);
  fine->add_option("--batch-size-ext", ac.batch_size_ext);
  fine->add_option("--lr-disc", ac.lr_disc);
  fine->add_option("--lr-encoder", ft.lr_encoder);
  fine->add_option("--lr-metric", ft.lr_metric);
  fine->add_option("--L", ft.L);
  fine->add_option("--n-neg", ft.n_neg);
  fine->add_option("--margin", ft.margin);
  fine->add_option("--seed", ac.seed);

  // eval-ai / eval-pc
  std::size_t paper_cap = 100;
  auto* eval_ai = app.add_subcommand("eval-ai", "Author identification");
  auto* eval_pc = app.add_subcommand("eval-pc", "Paper clustering");
  for (auto* cmd : {eval_ai, eval_pc}) {
    cmd->add_option("--model", model_dir)->required();
    cmd->add_option("--corpus", corpus_path)->required();
    cmd->add_option("--queries", queries_path)->required();
    cmd->add_option("--out", out_dir)->required();
  }
  eval_ai->add_option("--paper-cap", paper_cap);

  // link
  LinkOptions lo;
  auto* link_cmd = app.add_subcommand("link", "Link external mentions");
  link_cmd->add_option("--model", model_dir)->required();
  link_cmd->add_option("--corpus", corpus_path)->required();
  link_cmd->add_option("--external", external_path)->required();
  link_cmd->add_option("--schema", schema_name);
  link_cmd->add_option("--out", out_dir)->required();
  link_cmd->add_option("--threshold", lo.threshold);
  link_cmd->add_option("--paper-cap", lo.paper_cap);

  // serve
  ServiceConfig svc;
  std::string feedback_log = "feedback.jsonl";
  std::string snapshot_root = "snapshots";
  auto* serve = app.add_subcommand("serve", "Serve the HTTP linking API");
  serve->add_option("--model", model_dir)->required();
  serve->add_option("--corpus", corpus_path)->required();
  serve->add_option("--external", external_path, "Mentions to queue at startup");
  serve->add_option("--schema", schema_name);
  serve->add_option("--host", svc.host);
  serve->add_option("--port", svc.port);
  serve->add_option("--threshold", svc.link.threshold);
  serve->add_option("--paper-cap", svc.link.paper_cap);
  serve->add_option("--feedback", feedback_log);
  serve->add_option("--snapshots", snapshot_root);
  serve->add_option("--retrain-epochs", svc.retrain.epochs);
  serve->add_option("--lr-encoder", svc.retrain.train.lr_encoder);
  serve->add_option("--lr-metric", svc.retrain.train.lr_metric);

  // sweep
  std::string sweep_param = "n_neg";
  TrainFlags sf;
  auto* sweep = app.add_subcommand("sweep", "Vary L or n_neg");
  sweep->add_option("--param", sweep_param, "L or n_neg")
      ->check(CLI::IsMember({"L", "n_neg"}));
  sweep->add_option("--corpus", corpus_path)->required();
  sweep->add_option("--queries", queries_path)->required();
  sweep->add_option("--out", out_dir)->required();
  add_train_flags(sweep, sf);

  // export-embeddings
  auto* exp = app.add_subcommand("export-embeddings", "Write item embeddings");
  exp->add_option("--model", model_dir)->required();
  exp->add_option("--corpus", corpus_path)->required();
  exp->add_option("--external", external_path);
  exp->add_option("--schema", schema_name);
  exp->add_option("--out", out_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    const fs::path run(out_dir);
    RunManifest manifest;
    auto add_input = [&](const char* role, const std::string& p) {
      if (!p.empty()) manifest.inputs[role] = p;
    };
    add_input("corpus", corpus_path);
    add_input("external", external_path);
    add_input("queries", queries_path);
    add_input("model", model_dir);

    if (*synth) {
      sc.validate();
      manifest.command = "synth";
      manifest.seed = sc.seed;
      manifest.config = {{"n_experts", sc.n_experts},
                         {"papers_per_expert", sc.papers_per_expert},
                         {"topic_vocab", sc.topic_vocab},
                         {"background_vocab", sc.background_vocab},
                         {"overlap", sc.overlap},
                         {"name_group_size", sc.name_group_size},
                         {"mentions_per_expert", sc.mentions_per_expert},
                         {"sentences_per_side", sc.sentences_per_side},
                         {"sentence_tokens", sc.sentence_tokens},
                         {"shift", sc.shift},
                         {"shift_vocab", sc.shift_vocab},
                         {"holdout", holdout},
                         {"candidates", n_candidates}};
      manifest.outputs = {{"reference", run / "reference.jsonl"},
                          {"external", run / "external.jsonl"},
                          {"queries", run / "queries.jsonl"}};
      manifest.write(run);
      const SynthCorpus corpus = synth_corpus(sc);
      const auto split =
          split_for_identification(corpus.reference, holdout, n_candidates, sc.seed);
      save_reference_corpus(split.train, run / "reference.jsonl");
      save_mentions(corpus.mentions, Schema::kNews, run / "external.jsonl");
      save_queries(split.queries, run / "queries.jsonl");
      std::size_t total = 0;
      for (const auto& m : corpus.mentions) {
        total += split.train.candidate_set(m.name).size();
      }
      write_json(run / "reports" / "synth.json",
                 {{"experts", split.train.size()},
                  {"queries", split.queries.size()},
                  {"mentions", corpus.mentions.size()},
                  {"mean_candidates", corpus.mentions.empty()
                                          ? 0.0
                                          : static_cast<double>(total) /
                                                corpus.mentions.size()}});
      return 0;
    }

    if (*pre) {
      tf.train.validate();
      manifest.command = "pretrain";
      manifest.seed = tf.train.seed;
      manifest.config = train_json(tf);
      add_input("vocab_external", tf.external_vocab);
      manifest.outputs = {{"checkpoint", run / "checkpoint"},
                          {"train_log", run / "logs" / "train.jsonl"}};
      manifest.write(run);
      const Corpus corpus = load_reference_corpus(corpus_path);
      Model model = train_model(corpus, tf, run / "logs" / "train.jsonl");
      model.save(run / "checkpoint");
      return 0;
    }

    if (*fine) {
      ac.validate();
      ft.seed = ac.seed;
      ft.validate();
      manifest.command = "finetune";
      manifest.seed = ac.seed;
      manifest.config = {{"alpha", ac.alpha},
                         {"beta", ac.beta},
                         {"gamma", ac.gamma},
                         {"epochs", ac.epochs},
                         {"batch_size_ext", ac.batch_size_ext},
                         {"lr_disc", ac.lr_disc},
                         {"lr_encoder", ft.lr_encoder},
                         {"lr_metric", ft.lr_metric},
                         {"max_len_ext", ac.max_len_ext},
                         {"L", ft.L},
                         {"n_neg", ft.n_neg},
                         {"margin", ft.margin},
                         {"schema", schema_name}};
      manifest.outputs = {{"checkpoint", run / "checkpoint"},
                          {"finetune_log", run / "logs" / "finetune.jsonl"},
                          {"probe", run / "reports" / "probe.json"}};
      manifest.write(run);
      Model model = Model::load(model_dir);
      const Corpus corpus = load_reference_corpus(corpus_path);
      const auto mentions = load_mentions(external_path, parse_schema(schema_name));
      JsonlLog log(run / "logs" / "finetune.jsonl");
      const auto report = finetune(
          model, corpus, mentions, ft, ac,
          [&](std::size_t step, const LossBreakdown& b) {
            log.write({{"step", step}, {"pre", b.pre}, {"adv", b.adv},
                       {"diff", b.diff}, {"ext", b.ext}, {"total", b.total}});
          });
      model.save(run / "checkpoint");
      write_json(run / "reports" / "probe.json",
                 {{"probe_before", report.probe_before},
                  {"probe_after", report.probe_after},
                  {"steps", report.steps.size()}});
      return 0;
    }

    if (eval_ai->parsed() || eval_pc->parsed()) {
      const bool ai = eval_ai->parsed();
      manifest.command = ai ? "eval-ai" : "eval-pc";
      manifest.config = {{"paper_cap", paper_cap}};
      const fs::path report = run / "reports" / (ai ? "ai.json" : "pc.json");
      manifest.outputs = {{"report", report}};
      manifest.write(run);
      const Model model = Model::load(model_dir);
      const Corpus corpus = load_reference_corpus(corpus_path);
      const auto queries = load_queries(queries_path);
      if (ai) {
        write_json(report, ranking_json(
                               author_identification(model, queries, corpus, paper_cap)));
      } else {
        const auto r =
            paper_clustering_eval(model, clustering_names(corpus, queries));
        write_json(report, {{"p", r.precision}, {"r", r.recall}, {"f1", r.f1},
                            {"n_names", r.n_names}});
      }
      return 0;
    }

    if (*link_cmd) {
      manifest.command = "link";
      manifest.config = {{"threshold", lo.threshold},
                         {"paper_cap", lo.paper_cap},
                         {"schema", schema_name}};
      manifest.outputs = {{"links", run / "reports" / "links.jsonl"},
                          {"summary", run / "reports" / "link_summary.json"}};
      manifest.write(run);
      const Model model = Model::load(model_dir);
      const Corpus corpus = load_reference_corpus(corpus_path);
      const auto mentions = load_mentions(external_path, parse_schema(schema_name));
      fs::create_directories(run / "reports");
      std::ofstream out(run / "reports" / "links.jsonl");
      CandidateEmbeddings cache(model, corpus, lo.paper_cap);
      std::size_t labelled = 0;
      std::size_t hits = 0;
      std::size_t accepted = 0;
      for (const auto& m : mentions) {
        const LinkResult r = link(model, m, corpus, lo, &cache);
        out << to_json(r).dump() << '\n';
        accepted += r.accepted.has_value();
        if (m.truth_expert_id) {
          ++labelled;
          hits += !r.ranked.empty() && r.ranked[0].expert_id == *m.truth_expert_id;
        }
      }
      json summary = {{"mentions", mentions.size()}, {"accepted", accepted}};
      if (labelled) summary["hr1"] = static_cast<double>(hits) / labelled;
      write_json(run / "reports" / "link_summary.json", summary);
      return 0;
    }

    if (*serve) {
      svc.feedback_log = feedback_log;
      svc.snapshot_root = snapshot_root;
      Model model = Model::load(model_dir);
      Corpus corpus = load_reference_corpus(corpus_path);
      std::vector<ExternalMention> preload;
      if (!external_path.empty()) {
        preload = load_mentions(external_path, parse_schema(schema_name));
      }
      LinkService service(std::move(model), std::move(corpus), svc);
      for (const auto& m : preload) service.link_and_queue(m);
      std::cerr << "serving on " << svc.host << ":" << svc.port << std::endl;
      service.run();
      return 0;
    }

    if (*sweep) {
      manifest.command = "sweep";
      manifest.seed = sf.train.seed;
      manifest.config = train_json(sf);
      manifest.config["param"] = sweep_param;
      const Corpus corpus = load_reference_corpus(corpus_path);
      std::vector<std::size_t> grid = sweep_param == "L"
                                          ? std::vector<std::size_t>{1, 4, 7, 10, 13}
                                          : std::vector<std::size_t>{1, 3, 5, 7, 9};
      if (sweep_param == "L") {
        // Anchor and positive are disjoint, so L is capped by half the
        // smallest support.
        std::size_t n_min = std::numeric_limits<std::size_t>::max();
        for (const auto& e : corpus.experts()) n_min = std::min(n_min, e.support.size());
        std::erase_if(grid, [&](std::size_t L) { return 2 * L > n_min; });
        if (grid.empty()) throw Error("sweep: experts have too few papers for any L");
      }
      manifest.config["grid"] = grid;
      manifest.outputs = {{"report", run / "reports" / "sweep.json"}};
      manifest.write(run);
      const auto queries = load_queries(queries_path);
      json rows = json::array();
      for (std::size_t value : grid) {
        TrainFlags f = sf;
        (sweep_param == "L" ? f.train.L : f.train.n_neg) = value;
        const std::string tag = sweep_param + "=" + std::to_string(value);
        const Model model =
            train_model(corpus, f, run / "logs" / (tag + ".train.jsonl"));
        json row = ranking_json(author_identification(model, queries, corpus));
        row[sweep_param] = value;
        write_json(run / "reports" / (tag + ".json"), row);
        rows.push_back(row);
      }
      write_json(run / "reports" / "sweep.json", {{"param", sweep_param}, {"rows", rows}});
      return 0;
    }

    if (*exp) {
      manifest.command = "export-embeddings";
      manifest.config = {{"schema", schema_name}};
      manifest.outputs = {{"embeddings", run / "embeddings.tsv"}};
      manifest.write(run);
      const Model model = Model::load(model_dir);
      const Corpus corpus = load_reference_corpus(corpus_path);
      std::ofstream out(run / "embeddings.tsv");
      auto emit = [&](const std::string& owner, std::span<const SupportInfo> items) {
        for (std::size_t i = 0; i < items.size(); ++i) {
          const auto v = model.embed(items[i]);
          out << item_id(owner, i) << '\t';
          for (std::size_t t = 0; t < v.size(); ++t) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.17g", v[t]);
            out << (t ? "," : "") << buf;
          }
          out << '\n';
        }
      };
      for (const auto& e : corpus.experts()) emit(e.id, e.support);
      if (!external_path.empty()) {
        for (const auto& m : load_mentions(external_path, parse_schema(schema_name))) {
          emit(m.mention_id, m.support);
        }
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << json({{"error", e.what()}}).dump() << std::endl;
    return 1;
  }
  return 0;
}
