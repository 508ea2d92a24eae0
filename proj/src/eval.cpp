#include "explink/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "explink/error.hpp"
#include "explink/metric.hpp"

namespace explink {

RankingReport ranking_report(std::span<const std::size_t> ranks,
                             std::span<const std::size_t> ks) {
  if (ranks.empty()) throw Error("ranking_report: no queries");
  RankingReport report;
  report.n_queries = ranks.size();
  double rr = 0.0;
  for (std::size_t r : ranks) {
    if (r == 0) throw Error("ranking_report: ranks are 1-based");
    rr += 1.0 / static_cast<double>(r);
  }
  const double n = static_cast<double>(ranks.size());
  report.mrr = rr / n;
  for (std::size_t k : ks) {
    const auto hits = std::count_if(ranks.begin(), ranks.end(),
                                    [k](std::size_t r) { return r <= k; });
    report.hr_at[k] = static_cast<double>(hits) / n;
  }
  return report;
}

void sort_ranked(std::vector<ScoredCandidate>& ranked) {
  std::sort(ranked.begin(), ranked.end(),
            [](const ScoredCandidate& a, const ScoredCandidate& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.expert_id < b.expert_id;
            });
}

CandidateEmbeddings::CandidateEmbeddings(const Model& model,
                                         const Corpus& corpus,
                                         std::size_t paper_cap)
    : model_(&model), corpus_(&corpus), paper_cap_(paper_cap) {
  if (paper_cap == 0) throw Error("paper_cap must be >= 1");
}

const std::vector<std::vector<double>>& CandidateEmbeddings::of(
    const std::string& expert_id) {
  auto it = cache_.find(expert_id);
  if (it != cache_.end()) return it->second;
  const Expert& e = corpus_->expert(expert_id);
  const std::size_t n = std::min(paper_cap_, e.support.size());
  std::vector<std::vector<double>> embs;
  embs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) embs.push_back(model_->embed(e.support[i]));
  return cache_.emplace(expert_id, std::move(embs)).first->second;
}

std::vector<ScoredCandidate> rank_candidates(
    const Model& model, std::span<const std::vector<double>> query,
    std::span<const std::string> candidate_ids, CandidateEmbeddings& cache) {
  std::vector<ScoredCandidate> ranked;
  ranked.reserve(candidate_ids.size());
  for (const auto& id : candidate_ids) {
    ranked.push_back({id, score(model.metric, query, cache.of(id))});
  }
  sort_ranked(ranked);
  return ranked;
}

RankingReport author_identification(const Model& model,
                                    std::span<const IdentificationQuery> queries,
                                    const Corpus& corpus,
                                    std::size_t paper_cap) {
  CandidateEmbeddings cache(model, corpus, paper_cap);
  std::vector<std::size_t> ranks;
  ranks.reserve(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto& query = queries[q];
    if (std::find(query.candidates.begin(), query.candidates.end(),
                  query.truth_id) == query.candidates.end()) {
      throw Error("author_identification: query " + std::to_string(q) +
                  " truth '" + query.truth_id + "' is not a candidate");
    }
    const std::vector<std::vector<double>> emb{model.embed(query.paper)};
    const auto ranked = rank_candidates(model, emb, query.candidates, cache);
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      if (ranked[r].expert_id == query.truth_id) {
        ranks.push_back(r + 1);
        break;
      }
    }
  }
  return ranking_report(ranks);
}

IdentificationSplit split_for_identification(const Corpus& full,
                                             std::size_t holdout,
                                             std::size_t n_candidates,
                                             std::uint64_t seed) {
  if (n_candidates < 1) throw Error("split: n_candidates must be >= 1");
  Rng rng(seed);
  std::vector<Expert> kept;
  std::vector<std::pair<std::string, SupportInfo>> held;
  for (const auto& e : full.experts()) {
    if (e.support.size() <= holdout) {
      throw Error("split: expert '" + e.id + "' has " +
                  std::to_string(e.support.size()) + " papers, needs more than " +
                  std::to_string(holdout));
    }
    Expert k = e;
    for (std::size_t i = e.support.size() - holdout; i < e.support.size(); ++i) {
      held.emplace_back(e.id, e.support[i]);
    }
    k.support.resize(e.support.size() - holdout);
    kept.push_back(std::move(k));
  }
  IdentificationSplit split{Corpus(std::move(kept)), {}};
  std::vector<std::string> ids;
  for (const auto& e : split.train.experts()) ids.push_back(e.id);
  for (auto& [truth, paper] : held) {
    std::vector<std::string> others;
    for (const auto& id : ids) {
      if (id != truth) others.push_back(id);
    }
    std::shuffle(others.begin(), others.end(), rng);
    others.resize(std::min(others.size(), n_candidates - 1));
    others.push_back(truth);
    std::sort(others.begin(), others.end());
    split.queries.push_back({std::move(paper), truth, std::move(others)});
  }
  return split;
}

void save_queries(std::span<const IdentificationQuery> queries,
                  const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  for (const auto& q : queries) {
    nlohmann::json j = {{"truth_id", q.truth_id},
                        {"candidates", q.candidates},
                        {"paper", paper_to_json(q.paper)}};
    out << j.dump() << '\n';
  }
}

std::vector<IdentificationQuery> load_queries(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  std::vector<IdentificationQuery> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      IdentificationQuery q;
      q.truth_id = j.at("truth_id").get<std::string>();
      q.candidates = j.at("candidates").get<std::vector<std::string>>();
      q.paper = paper_from_json(j.at("paper"));
      out.push_back(std::move(q));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    } catch (const Error& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
  return out;
}

std::vector<ClusteringName> clustering_names(
    const Corpus& corpus, std::span<const IdentificationQuery> queries) {
  // Experts sharing a name share a candidate set; its first id keys the name.
  std::map<std::string, std::map<std::string, std::vector<const SupportInfo*>>>
      groups;
  for (const auto& q : queries) {
    const auto ids = corpus.candidate_set(corpus.expert(q.truth_id).name);
    groups[ids.front()][q.truth_id].push_back(&q.paper);
  }
  std::vector<ClusteringName> names;
  for (const auto& [key, experts] : groups) {
    if (experts.size() < 2) continue;
    ClusteringName n;
    std::size_t label = 0;
    for (const auto& [id, papers] : experts) {
      for (const auto* p : papers) {
        n.papers.push_back(*p);
        n.truth.push_back(label);
      }
      ++label;
    }
    names.push_back(std::move(n));
  }
  return names;
}

HacResult hac_cluster(std::span<const std::vector<double>> points,
                      std::size_t k) {
  if (k < 1) throw Error("hac_cluster: k must be >= 1");
  const std::size_t n = points.size();
  if (k > n) {
    throw Error("hac_cluster: k=" + std::to_string(k) + " exceeds " +
                std::to_string(n) + " items");
  }
  // Cluster i is named by its smallest member; `sum` holds the total
  // pairwise distance between two live clusters.
  std::vector<std::vector<double>> sum(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (points[i].size() != points[j].size()) {
        throw Error("hac_cluster: points differ in dimension");
      }
      double d2 = 0.0;
      for (std::size_t t = 0; t < points[i].size(); ++t) {
        const double d = points[i][t] - points[j][t];
        d2 += d * d;
      }
      sum[i][j] = sum[j][i] = std::sqrt(d2);
    }
  }
  std::vector<std::size_t> count(n, 1);
  std::vector<bool> live(n, true);
  std::vector<std::size_t> owner(n);
  std::iota(owner.begin(), owner.end(), 0);

  HacResult result;
  for (std::size_t clusters = n; clusters > k; --clusters) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t ba = 0;
    std::size_t bb = 0;
    for (std::size_t a = 0; a < n; ++a) {
      if (!live[a]) continue;
      for (std::size_t b = a + 1; b < n; ++b) {
        if (!live[b]) continue;
        const double d = sum[a][b] / static_cast<double>(count[a] * count[b]);
        if (d < best) {
          best = d;
          ba = a;
          bb = b;
        }
      }
    }
    result.merges.push_back({ba, bb, best});
    for (std::size_t c = 0; c < n; ++c) {
      if (!live[c] || c == ba || c == bb) continue;
      sum[ba][c] = sum[c][ba] = sum[ba][c] + sum[bb][c];
    }
    count[ba] += count[bb];
    live[bb] = false;
    for (auto& o : owner) {
      if (o == bb) o = ba;
    }
  }

  std::vector<std::size_t> dense(n, static_cast<std::size_t>(-1));
  std::size_t next = 0;
  result.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& d = dense[owner[i]];
    if (d == static_cast<std::size_t>(-1)) d = next++;
    result.labels[i] = d;
  }
  return result;
}

PairwiseScores pairwise_prf(std::span<const std::size_t> pred,
                            std::span<const std::size_t> truth) {
  if (pred.size() != truth.size()) {
    throw Error("pairwise_prf: " + std::to_string(pred.size()) +
                " predicted vs " + std::to_string(truth.size()) +
                " true assignments");
  }
  std::size_t both = 0;
  std::size_t same_pred = 0;
  std::size_t same_truth = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = i + 1; j < pred.size(); ++j) {
      const bool p = pred[i] == pred[j];
      const bool t = truth[i] == truth[j];
      same_pred += p;
      same_truth += t;
      both += p && t;
    }
  }
  PairwiseScores s;
  s.precision = same_pred ? static_cast<double>(both) / same_pred
                          : (same_truth == 0 ? 1.0 : 0.0);
  s.recall = same_truth ? static_cast<double>(both) / same_truth
                        : (same_pred == 0 ? 1.0 : 0.0);
  s.f1 = (s.precision + s.recall) > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

ClusterReport macro_average(std::span<const PairwiseScores> per_name) {
  ClusterReport r;
  r.n_names = per_name.size();
  if (per_name.empty()) return r;
  for (const auto& s : per_name) {
    r.precision += s.precision;
    r.recall += s.recall;
    r.f1 += s.f1;
  }
  const double n = static_cast<double>(per_name.size());
  r.precision /= n;
  r.recall /= n;
  r.f1 /= n;
  return r;
}

ClusterReport paper_clustering_eval(const Model& model,
                                    std::span<const ClusteringName> names) {
  std::vector<PairwiseScores> scores;
  scores.reserve(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& name = names[i];
    if (name.papers.size() < 2 || name.papers.size() != name.truth.size()) {
      throw Error("paper_clustering_eval: name " + std::to_string(i) +
                  " needs >= 2 papers with one label each");
    }
    std::vector<std::vector<double>> embs;
    embs.reserve(name.papers.size());
    for (const auto& p : name.papers) embs.push_back(model.embed(p));
    const std::size_t k =
        std::set<std::size_t>(name.truth.begin(), name.truth.end()).size();
    const HacResult hac = hac_cluster(embs, k);
    scores.push_back(pairwise_prf(hac.labels, name.truth));
  }
  return macro_average(scores);
}

double probe_accuracy(std::span<const std::vector<double>> features,
                      std::span<const int> labels, const ProbeConfig& cfg) {
  if (features.size() != labels.size() || features.empty()) {
    throw Error("probe: features and labels must be non-empty and aligned");
  }
  if (std::set<int>(labels.begin(), labels.end()).size() < 2) {
    throw Error("probe: both domains must be present");
  }
  const std::size_t n = features.size();
  const std::size_t d = features[0].size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_train = static_cast<std::size_t>(
      std::lround(cfg.train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  // Standardize with training statistics.
  std::vector<double> mean(d, 0.0);
  std::vector<double> sd(d, 0.0);
  for (std::size_t i = 0; i < n_train; ++i) {
    for (std::size_t t = 0; t < d; ++t) mean[t] += features[order[i]][t];
  }
  for (auto& m : mean) m /= static_cast<double>(n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    for (std::size_t t = 0; t < d; ++t) {
      const double c = features[order[i]][t] - mean[t];
      sd[t] += c * c;
    }
  }
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(n_train)) + 1e-8;
  auto standardized = [&](std::size_t i) {
    std::vector<double> x(d);
    for (std::size_t t = 0; t < d; ++t) {
      x[t] = (features[i][t] - mean[t]) / sd[t];
    }
    return x;
  };
  std::vector<std::vector<double>> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = standardized(i);

  std::vector<double> w(d, 0.0);
  double bias = 0.0;
  std::vector<double> gw(d);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < n_train; ++i) {
      const auto& xi = x[order[i]];
      double z = bias;
      for (std::size_t t = 0; t < d; ++t) z += w[t] * xi[t];
      const double err = 1.0 / (1.0 + std::exp(-z)) - labels[order[i]];
      for (std::size_t t = 0; t < d; ++t) gw[t] += err * xi[t];
      gb += err;
    }
    const double inv = 1.0 / static_cast<double>(n_train);
    for (std::size_t t = 0; t < d; ++t) w[t] -= cfg.lr * gw[t] * inv;
    bias -= cfg.lr * gb * inv;
  }

  std::size_t correct = 0;
  for (std::size_t i = n_train; i < n; ++i) {
    const auto& xi = x[order[i]];
    double z = bias;
    for (std::size_t t = 0; t < d; ++t) z += w[t] * xi[t];
    correct += (z >= 0.0 ? 1 : 0) == labels[order[i]];
  }
  return static_cast<double>(correct) / static_cast<double>(n - n_train);
}

double discriminator_probe(const GeneratorParams& gen,
                           const Tokenizer& tokenizer,
                           std::span<const LabeledSupport> labeled,
                           const ProbeConfig& cfg) {
  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  features.reserve(labeled.size());
  labels.reserve(labeled.size());
  for (const auto& item : labeled) {
    features.push_back(encode(gen, tokenizer(item.info)));
    labels.push_back(item.domain == Source::kExternal ? 1 : 0);
  }
  return probe_accuracy(features, labels, cfg);
}

}  // namespace explink
