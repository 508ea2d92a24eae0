#pragma once

// Linking external mentions to reference experts, plus the feedback store
// that turns reviewer verdicts into new training triplets.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "explink/corpus.hpp"
#include "explink/eval.hpp"
#include "explink/model.hpp"
#include "explink/pretrain.hpp"
#include "json.hpp"

namespace explink {

struct LinkOptions {
  double threshold = 0.0;
  std::size_t paper_cap = 100;
};

struct LinkResult {
  std::string mention_id;
  std::vector<ScoredCandidate> ranked;
  // ranked[0] when its score reaches the threshold.
  std::optional<std::string> accepted;

  bool operator==(const LinkResult&) const = default;
};

// Candidates come from the name-variant index; the mention's support is the
// first metric argument. No candidates gives an empty result, not an error.
LinkResult link(const Model& model, const ExternalMention& mention,
                const Corpus& corpus, const LinkOptions& options,
                CandidateEmbeddings* cache = nullptr);

// Applies a threshold to an already ranked list.
std::optional<std::string> accept(std::span<const ScoredCandidate> ranked,
                                  double threshold);

// Stable id for an ad-hoc mention: "m-" + FNV-1a 64 of name and support.
std::string mention_key(std::string_view name,
                        std::span<const std::string> support);

nlohmann::json to_json(const LinkResult& result);
LinkResult link_result_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExternalMention& mention);
ExternalMention mention_from_json(const nlohmann::json& j);

enum class Verdict { kConfirm, kCorrect, kRejectAll };

std::string_view to_string(Verdict v);
// Throws Error for unknown verdict names.
Verdict parse_verdict(std::string_view name);

struct Feedback {
  std::string mention_id;
  Verdict verdict = Verdict::kConfirm;
  std::optional<std::string> corrected_expert_id;
  std::int64_t timestamp = 0;  // seconds since the epoch

  bool operator==(const Feedback&) const = default;
};

// One reviewed mention: the anchor's support, the linked expert (absent
// for reject_all) and the candidates that become negatives.
struct FeedbackTriplet {
  ExternalMention mention;
  std::optional<std::string> positive;
  std::vector<std::string> negatives;

  bool operator==(const FeedbackTriplet&) const = default;
};

struct FeedbackRecord {
  Feedback feedback;
  ExternalMention mention;
  LinkResult result;

  bool operator==(const FeedbackRecord&) const = default;
};

// Throws Error when the verdict is inconsistent with the record or the
// corrected id is not in the corpus.
FeedbackTriplet to_triplet(const FeedbackRecord& record, const Corpus& corpus);

// Append-only JSONL log of feedback records. Reopening a file replays it.
class FeedbackStore {
 public:
  explicit FeedbackStore(std::filesystem::path path);

  // Validates, appends durably and returns the derived triplet.
  FeedbackTriplet submit(const Feedback& fb, const ExternalMention& mention,
                         const LinkResult& result, const Corpus& corpus);

  const std::vector<FeedbackRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  const std::filesystem::path& path() const { return path_; }

  // Triplets of every record, in log order.
  std::vector<FeedbackTriplet> training_set(const Corpus& corpus) const;

 private:
  std::filesystem::path path_;
  std::vector<FeedbackRecord> records_;
};

struct RetrainConfig {
  TrainConfig train;
  std::size_t epochs = 30;
  // Reference triplets mixed in per feedback triplet.
  std::size_t replay_ratio = 1;
};

// Continues training on feedback triplets mixed with fresh reference
// triplets. Returns a copy of the model with version + 1. Throws Error when
// the store holds no trainable feedback.
Model retrain_from_feedback(const Model& model, const FeedbackStore& store,
                            const Corpus& corpus, const RetrainConfig& cfg);

}  // namespace explink
