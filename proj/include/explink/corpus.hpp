#pragma once

// Experts, their support information, corpus ingestion, instance/triplet
// sampling and name-variant candidate generation.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace explink {

using Rng = std::mt19937_64;

enum class SupportKind { kPaper, kSentence, kAttribute };

std::string_view to_string(SupportKind kind);

struct TextField {
  std::string name;
  std::string value;

  bool operator==(const TextField&) const = default;
};

// One atomic piece of text describing an expert. Paper fields are stored in
// the order title, keyword*, author*, org, venue, year (year is never
// tokenized). Repeated field names carry list-valued attributes.
struct SupportInfo {
  SupportKind kind = SupportKind::kPaper;
  std::vector<TextField> fields;

  bool operator==(const SupportInfo&) const = default;

  // First value of the named field, or empty.
  std::string_view field(std::string_view name) const;
};

enum class Source { kReference, kExternal };

struct Expert {
  std::string id;
  std::string name;
  std::vector<SupportInfo> support;
  Source source = Source::kReference;

  bool operator==(const Expert&) const = default;
};

struct ExternalMention {
  std::string mention_id;
  std::string name;
  std::vector<SupportInfo> support;
  std::optional<std::string> truth_expert_id;

  bool operator==(const ExternalMention&) const = default;
};

// A sampled subset of one owner's support list (indices, distinct).
struct ExpertInstance {
  std::string expert_id;
  std::vector<std::size_t> items;

  bool operator==(const ExpertInstance&) const = default;
};

struct TripletBatch {
  ExpertInstance anchor;
  ExpertInstance positive;
  std::vector<ExpertInstance> negatives;

  bool operator==(const TripletBatch&) const = default;
};

// Lowercased name variants: the original order, the rotation with the last
// token moved first, and both orders with every token but the last reduced
// to its initial.
std::set<std::string> generate_name_variants(std::string_view name);

// Reference experts, immutable after construction.
class Corpus {
 public:
  Corpus() = default;
  // Throws Error on duplicate ids or experts without support.
  explicit Corpus(std::vector<Expert> experts);

  const std::vector<Expert>& experts() const { return experts_; }
  std::size_t size() const { return experts_.size(); }

  const Expert* find(std::string_view id) const;
  // Throws Error naming the id when absent.
  const Expert& expert(std::string_view id) const;

  // Ids of experts whose variant set intersects the query's, sorted by id.
  std::vector<std::string> candidate_set(std::string_view query_name) const;

  bool operator==(const Corpus& other) const {
    return experts_ == other.experts_;
  }

 private:
  std::vector<Expert> experts_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_variant_;
};

// Maps an owner id (expert or mention) to its support list. Holds
// non-owning views; the referenced corpora must outlive the lookup.
class SupportLookup {
 public:
  SupportLookup() = default;
  explicit SupportLookup(const Corpus& corpus);

  void add(const Corpus& corpus);
  void add(std::span<const ExternalMention> mentions);
  void add(const std::string& owner_id, std::span<const SupportInfo> support);

  // Throws Error for unknown owners.
  std::span<const SupportInfo> support(std::string_view owner_id) const;
  bool contains(std::string_view owner_id) const;

 private:
  std::map<std::string, std::span<const SupportInfo>, std::less<>> owners_;
};

enum class Schema { kReference, kNews, kLinkedIn };

Schema parse_schema(std::string_view name);

// Maximum sentences kept on each side of a news mention.
inline constexpr std::size_t kNewsWindow = 6;

// Line-delimited JSON loaders. Malformed lines raise ParseError with the
// line number; duplicate ids reject the whole load.
Corpus load_reference_corpus(const std::filesystem::path& path);
std::vector<ExternalMention> load_mentions(const std::filesystem::path& path,
                                           Schema schema);

void save_reference_corpus(const Corpus& corpus,
                           const std::filesystem::path& path);
void save_mentions(std::span<const ExternalMention> mentions, Schema schema,
                   const std::filesystem::path& path);

// Builds a paper SupportInfo in canonical field order.
SupportInfo make_paper(std::string_view title,
                       std::span<const std::string> keywords,
                       std::span<const std::string> authors,
                       std::string_view org, std::string_view venue,
                       std::optional<int> year = std::nullopt);
SupportInfo make_sentence(std::string_view text);

// Paper object as it appears inside a reference record. The parser throws
// Error on malformed input.
nlohmann::json paper_to_json(const SupportInfo& paper);
SupportInfo paper_from_json(const nlohmann::json& paper);

// Splits free text into sentences on terminal punctuation.
std::vector<std::string> split_sentences(std::string_view text);

ExpertInstance sample_instance(const Expert& expert, std::size_t cap,
                               Rng& rng);

struct TripletSampling {
  std::size_t cap = 6;
  std::size_t n_neg = 9;
  std::size_t per_expert = 10;
};

// Experts need at least 2 * cap items to form disjoint anchor/positive
// pairs. Throws Error when fewer than two experts are eligible.
std::vector<TripletBatch> sample_triplets(const Corpus& corpus,
                                          const TripletSampling& sampling,
                                          Rng& rng);

std::size_t triplet_eligibility_threshold(std::size_t cap);

}  // namespace explink
