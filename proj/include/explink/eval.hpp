#pragma once

// Intrinsic evaluation: author identification (HR@K, MRR), paper
// clustering (average-linkage HAC + pairwise P/R/F1), and a linear domain
// probe over frozen shared embeddings.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "explink/corpus.hpp"
#include "explink/model.hpp"

namespace explink {

struct RankingReport {
  std::map<std::size_t, double> hr_at;
  double mrr = 0.0;
  std::size_t n_queries = 0;

  double hr(std::size_t k) const { return hr_at.at(k); }
};

inline constexpr std::size_t kDefaultKs[] = {1, 3};

// From 1-based ranks of the truth.
RankingReport ranking_report(std::span<const std::size_t> ranks,
                             std::span<const std::size_t> ks = kDefaultKs);

struct ScoredCandidate {
  std::string expert_id;
  double score = 0.0;

  bool operator==(const ScoredCandidate&) const = default;
};

// Sorted by descending score, ties by ascending id.
void sort_ranked(std::vector<ScoredCandidate>& ranked);

// Caches shared-generator embeddings of each expert's first `paper_cap`
// papers.
class CandidateEmbeddings {
 public:
  CandidateEmbeddings(const Model& model, const Corpus& corpus,
                      std::size_t paper_cap);

  const std::vector<std::vector<double>>& of(const std::string& expert_id);

 private:
  const Model* model_;
  const Corpus* corpus_;
  std::size_t paper_cap_;
  std::map<std::string, std::vector<std::vector<double>>> cache_;
};

// Scores every candidate with the query embeddings as the first metric
// argument and returns them ranked.
std::vector<ScoredCandidate> rank_candidates(
    const Model& model, std::span<const std::vector<double>> query,
    std::span<const std::string> candidate_ids, CandidateEmbeddings& cache);

struct IdentificationQuery {
  SupportInfo paper;
  std::string truth_id;
  std::vector<std::string> candidates;
};

// Throws Error naming the query when its truth is not a candidate.
RankingReport author_identification(const Model& model,
                                    std::span<const IdentificationQuery> queries,
                                    const Corpus& corpus,
                                    std::size_t paper_cap = 100);

struct IdentificationSplit {
  Corpus train;
  std::vector<IdentificationQuery> queries;
};

// Holds out the last `holdout` papers of every expert as queries. Each
// query lists its truth plus n_candidates - 1 other experts drawn
// uniformly with `seed`, sorted by id.
IdentificationSplit split_for_identification(const Corpus& full,
                                             std::size_t holdout,
                                             std::size_t n_candidates,
                                             std::uint64_t seed);

// One JSON object per line: {"truth_id", "candidates", "paper"}.
void save_queries(std::span<const IdentificationQuery> queries,
                  const std::filesystem::path& path);
std::vector<IdentificationQuery> load_queries(const std::filesystem::path& path);

// Each merge joins clusters named by their smallest member index.
struct Merge {
  std::size_t a = 0;
  std::size_t b = 0;
  double distance = 0.0;
};

struct HacResult {
  std::vector<std::size_t> labels;  // dense, in order of first appearance
  std::vector<Merge> merges;
};

// Average-linkage agglomeration on Euclidean distance down to k clusters;
// ties resolved by the smallest (a, b) pair.
HacResult hac_cluster(std::span<const std::vector<double>> points,
                      std::size_t k);

struct PairwiseScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Pairwise P/R/F1 over unordered item pairs. An empty denominator scores 1
// when the other assignment also has no co-clustered pairs, else 0.
PairwiseScores pairwise_prf(std::span<const std::size_t> pred,
                            std::span<const std::size_t> truth);

struct ClusterReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t n_names = 0;
};

struct ClusteringName {
  std::vector<SupportInfo> papers;
  std::vector<std::size_t> truth;
};

// Query papers grouped by the colliding name of their truth experts; the
// truth assignment is the expert. Names with a single expert are skipped.
std::vector<ClusteringName> clustering_names(
    const Corpus& corpus, std::span<const IdentificationQuery> queries);

ClusterReport macro_average(std::span<const PairwiseScores> per_name);

ClusterReport paper_clustering_eval(const Model& model,
                                    std::span<const ClusteringName> names);

struct LabeledSupport {
  SupportInfo info;
  Source domain = Source::kReference;
};

struct ProbeConfig {
  double train_fraction = 0.7;
  std::size_t iterations = 300;
  double lr = 0.5;
  std::uint64_t seed = 11;
};

// Held-out accuracy of a logistic-regression probe trained on frozen
// embeddings from `gen`. Throws Error unless both domains are present.
double discriminator_probe(const GeneratorParams& gen,
                           const Tokenizer& tokenizer,
                           std::span<const LabeledSupport> labeled,
                           const ProbeConfig& cfg = {});

double probe_accuracy(std::span<const std::vector<double>> features,
                      std::span<const int> labels, const ProbeConfig& cfg);

}  // namespace explink
