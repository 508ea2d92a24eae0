#include "explink/linker.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>

#include <fcntl.h>
#include <unistd.h>

#include "explink/error.hpp"

namespace explink {

using nlohmann::json;

std::optional<std::string> accept(std::span<const ScoredCandidate> ranked,
                                  double threshold) {
  if (ranked.empty() || ranked.front().score < threshold) return std::nullopt;
  return ranked.front().expert_id;
}

LinkResult link(const Model& model, const ExternalMention& mention,
                const Corpus& corpus, const LinkOptions& options,
                CandidateEmbeddings* cache) {
  LinkResult result;
  result.mention_id = mention.mention_id;
  const auto candidates = corpus.candidate_set(mention.name);
  if (candidates.empty()) return result;
  if (mention.support.empty()) {
    throw Error("link: mention '" + mention.mention_id + "' has no support");
  }
  std::vector<std::vector<double>> query;
  query.reserve(mention.support.size());
  for (const auto& s : mention.support) query.push_back(model.embed(s));
  std::optional<CandidateEmbeddings> local;
  if (!cache) cache = &local.emplace(model, corpus, options.paper_cap);
  result.ranked = rank_candidates(model, query, candidates, *cache);
  result.accepted = accept(result.ranked, options.threshold);
  return result;
}

std::string mention_key(std::string_view name,
                        std::span<const std::string> support) {
  std::uint64_t h = 14695981039346656037ULL;
  auto feed = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= 0x1f;
    h *= 1099511628211ULL;
  };
  feed(name);
  for (const auto& s : support) feed(s);
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string("m-") + buf;
}

json to_json(const LinkResult& result) {
  json ranked = json::array();
  for (const auto& c : result.ranked) {
    ranked.push_back({{"expert_id", c.expert_id}, {"score", c.score}});
  }
  return {{"mention_id", result.mention_id},
          {"ranked", ranked},
          {"accepted", result.accepted ? json(*result.accepted) : json(nullptr)}};
}

LinkResult link_result_from_json(const json& j) {
  LinkResult r;
  r.mention_id = j.at("mention_id").get<std::string>();
  for (const auto& c : j.at("ranked")) {
    r.ranked.push_back(
        {c.at("expert_id").get<std::string>(), c.at("score").get<double>()});
  }
  if (!j.at("accepted").is_null()) r.accepted = j.at("accepted").get<std::string>();
  return r;
}

namespace {

SupportKind parse_kind(const std::string& s) {
  if (s == "paper") return SupportKind::kPaper;
  if (s == "sentence") return SupportKind::kSentence;
  if (s == "attribute") return SupportKind::kAttribute;
  throw Error("unknown support kind '" + s + "'");
}

}  // namespace

json to_json(const ExternalMention& mention) {
  json support = json::array();
  for (const auto& s : mention.support) {
    json fields = json::array();
    for (const auto& f : s.fields) fields.push_back({f.name, f.value});
    support.push_back({{"kind", std::string(to_string(s.kind))},
                       {"fields", fields}});
  }
  json j = {{"mention_id", mention.mention_id},
            {"name", mention.name},
            {"support", support}};
  if (mention.truth_expert_id) j["truth_id"] = *mention.truth_expert_id;
  return j;
}

ExternalMention mention_from_json(const json& j) {
  ExternalMention m;
  m.mention_id = j.at("mention_id").get<std::string>();
  m.name = j.at("name").get<std::string>();
  for (const auto& s : j.at("support")) {
    SupportInfo info;
    info.kind = parse_kind(s.at("kind").get<std::string>());
    for (const auto& f : s.at("fields")) {
      info.fields.push_back({f.at(0).get<std::string>(), f.at(1).get<std::string>()});
    }
    m.support.push_back(std::move(info));
  }
  if (j.contains("truth_id")) m.truth_expert_id = j["truth_id"].get<std::string>();
  return m;
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::kConfirm:
      return "confirm";
    case Verdict::kCorrect:
      return "correct";
    case Verdict::kRejectAll:
      return "reject_all";
  }
  return "unknown";
}

Verdict parse_verdict(std::string_view name) {
  if (name == "confirm") return Verdict::kConfirm;
  if (name == "correct") return Verdict::kCorrect;
  if (name == "reject_all") return Verdict::kRejectAll;
  throw Error("unknown verdict '" + std::string(name) + "'");
}

FeedbackTriplet to_triplet(const FeedbackRecord& record, const Corpus& corpus) {
  const Feedback& fb = record.feedback;
  if (fb.mention_id != record.mention.mention_id ||
      fb.mention_id != record.result.mention_id) {
    throw Error("feedback for '" + fb.mention_id +
                "' does not match its mention/result");
  }
  if (fb.corrected_expert_id.has_value() != (fb.verdict == Verdict::kCorrect)) {
    throw Error("feedback for '" + fb.mention_id +
                "': corrected_expert_id must be given exactly for 'correct'");
  }
  FeedbackTriplet t;
  t.mention = record.mention;
  const auto& ranked = record.result.ranked;
  switch (fb.verdict) {
    case Verdict::kConfirm:
      if (ranked.empty()) {
        throw Error("feedback for '" + fb.mention_id +
                    "': nothing to confirm, no candidates");
      }
      // The top candidate, whether or not it cleared the threshold.
      t.positive = ranked.front().expert_id;
      break;
    case Verdict::kCorrect:
      if (!corpus.find(*fb.corrected_expert_id)) {
        throw Error("feedback for '" + fb.mention_id + "': unknown expert '" +
                    *fb.corrected_expert_id + "'");
      }
      t.positive = fb.corrected_expert_id;
      break;
    case Verdict::kRejectAll:
      break;
  }
  for (const auto& c : ranked) {
    if (!t.positive || c.expert_id != *t.positive) {
      t.negatives.push_back(c.expert_id);
    }
  }
  return t;
}

namespace {

json record_to_json(const FeedbackRecord& r) {
  json fb = {{"mention_id", r.feedback.mention_id},
             {"verdict", std::string(to_string(r.feedback.verdict))},
             {"timestamp", r.feedback.timestamp}};
  if (r.feedback.corrected_expert_id) {
    fb["corrected_expert_id"] = *r.feedback.corrected_expert_id;
  }
  return {{"feedback", fb},
          {"mention", to_json(r.mention)},
          {"result", to_json(r.result)}};
}

FeedbackRecord record_from_json(const json& j) {
  FeedbackRecord r;
  const auto& fb = j.at("feedback");
  r.feedback.mention_id = fb.at("mention_id").get<std::string>();
  r.feedback.verdict = parse_verdict(fb.at("verdict").get<std::string>());
  r.feedback.timestamp = fb.at("timestamp").get<std::int64_t>();
  if (fb.contains("corrected_expert_id")) {
    r.feedback.corrected_expert_id = fb["corrected_expert_id"].get<std::string>();
  }
  r.mention = mention_from_json(j.at("mention"));
  r.result = link_result_from_json(j.at("result"));
  return r;
}

}  // namespace

FeedbackStore::FeedbackStore(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_);
  if (!in) return;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records_.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(path_.string(), line_no, e.what());
    } catch (const Error& e) {
      throw ParseError(path_.string(), line_no, e.what());
    }
  }
}

FeedbackTriplet FeedbackStore::submit(const Feedback& fb,
                                      const ExternalMention& mention,
                                      const LinkResult& result,
                                      const Corpus& corpus) {
  FeedbackRecord record{fb, mention, result};
  FeedbackTriplet t = to_triplet(record, corpus);
  const std::string line = record_to_json(record).dump() + "\n";
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw Error("cannot open feedback log '" + path_.string() + "'");
  const bool ok = ::write(fd, line.data(), line.size()) ==
                      static_cast<ssize_t>(line.size()) &&
                  ::fsync(fd) == 0;
  ::close(fd);
  if (!ok) throw Error("failed to append to feedback log '" + path_.string() + "'");
  records_.push_back(std::move(record));
  return t;
}

std::vector<FeedbackTriplet> FeedbackStore::training_set(
    const Corpus& corpus) const {
  std::vector<FeedbackTriplet> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(to_triplet(r, corpus));
  return out;
}

Model retrain_from_feedback(const Model& model, const FeedbackStore& store,
                            const Corpus& corpus, const RetrainConfig& cfg) {
  cfg.train.validate();
  std::vector<FeedbackTriplet> feedback;
  for (auto& t : store.training_set(corpus)) {
    // reject_all records only carry negatives.
    if (t.positive) feedback.push_back(std::move(t));
  }
  if (feedback.empty()) throw Error("retrain: feedback store has no trainable records");

  SupportLookup lookup(corpus);
  for (const auto& t : feedback) {
    if (corpus.find(t.mention.mention_id)) {
      throw Error("retrain: mention id '" + t.mention.mention_id +
                  "' collides with an expert id");
    }
    if (t.mention.support.empty()) {
      throw Error("retrain: mention '" + t.mention.mention_id + "' has no support");
    }
    if (!lookup.contains(t.mention.mention_id)) {
      lookup.add(t.mention.mention_id, t.mention.support);
    }
  }

  Model out = model;
  Adam optimizer = make_pretrain_optimizer(out, cfg.train);
  Rng shuffle_rng = derive_rng(cfg.train.seed, 5);
  const std::size_t cap = cfg.train.L;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng = derive_rng(cfg.train.seed, 3000 + epoch);
    std::vector<TripletBatch> triplets;
    for (const auto& t : feedback) {
      TripletBatch b;
      b.anchor.expert_id = t.mention.mention_id;
      b.anchor.items.resize(t.mention.support.size());
      std::iota(b.anchor.items.begin(), b.anchor.items.end(), 0);
      b.positive = sample_instance(corpus.expert(*t.positive), cap, rng);
      for (const auto& n : t.negatives) {
        b.negatives.push_back(sample_instance(corpus.expert(n), cap, rng));
      }
      if (b.negatives.empty()) {
        // Lone candidate: contrast against a random other expert.
        std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
        const Expert* e = nullptr;
        do {
          e = &corpus.experts()[pick(rng)];
        } while (e->id == *t.positive && corpus.size() > 1);
        if (e->id != *t.positive) b.negatives.push_back(sample_instance(*e, cap, rng));
      }
      triplets.push_back(std::move(b));
    }
    if (cfg.replay_ratio > 0) {
      auto replay = sample_triplets(corpus, cfg.train.sampling(), rng);
      std::shuffle(replay.begin(), replay.end(), rng);
      const std::size_t want = cfg.replay_ratio * feedback.size();
      for (std::size_t i = 0; i < want; ++i) {
        triplets.push_back(replay[i % replay.size()]);
      }
    }
    pretrain_epoch(out, triplets, lookup, cfg.train, optimizer, shuffle_rng);
    optimizer.decay_epoch();
  }
  out.version = model.version + 1;
  return out;
}

}  // namespace explink
