#include "explink/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

#include "explink/error.hpp"
#include "json.hpp"

namespace explink {

using nlohmann::json;

std::string_view to_string(SupportKind kind) {
  switch (kind) {
    case SupportKind::kPaper:
      return "paper";
    case SupportKind::kSentence:
      return "sentence";
    case SupportKind::kAttribute:
      return "attribute";
  }
  return "unknown";
}

std::string_view SupportInfo::field(std::string_view name) const {
  for (const auto& f : fields) {
    if (f.name == name) return f.value;
  }
  return {};
}

namespace {

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

// First code point of a UTF-8 token.
std::string initial(const std::string& token) {
  std::size_t len = 1;
  const auto lead = static_cast<unsigned char>(token[0]);
  if (lead >= 0xF0) {
    len = 4;
  } else if (lead >= 0xE0) {
    len = 3;
  } else if (lead >= 0xC0) {
    len = 2;
  }
  return token.substr(0, std::min(len, token.size()));
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::vector<std::string> initialized(std::vector<std::string> tokens) {
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    tokens[i] = initial(tokens[i]);
  }
  return tokens;
}

bool has_text(const SupportInfo& info) {
  return std::any_of(info.fields.begin(), info.fields.end(),
                     [](const TextField& f) {
                       return f.name != "year" && !f.value.empty();
                     });
}

}  // namespace

std::set<std::string> generate_name_variants(std::string_view name) {
  auto tokens = split_whitespace(lowercase(name));
  if (tokens.empty()) throw Error("generate_name_variants: empty name");
  if (tokens.size() == 1) return {tokens.front()};

  std::vector<std::string> rotated;
  rotated.push_back(tokens.back());
  rotated.insert(rotated.end(), tokens.begin(), tokens.end() - 1);

  return {join(tokens), join(rotated), join(initialized(tokens)),
          join(initialized(rotated))};
}

Corpus::Corpus(std::vector<Expert> experts) : experts_(std::move(experts)) {
  for (std::size_t i = 0; i < experts_.size(); ++i) {
    const auto& e = experts_[i];
    if (e.support.empty()) {
      throw Error("expert '" + e.id + "' has no support information");
    }
    if (!by_id_.emplace(e.id, i).second) {
      throw Error("duplicate expert id '" + e.id + "'");
    }
    if (split_whitespace(e.name).empty()) continue;
    for (const auto& v : generate_name_variants(e.name)) {
      by_variant_[v].push_back(i);
    }
  }
}

const Expert* Corpus::find(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  return it == by_id_.end() ? nullptr : &experts_[it->second];
}

const Expert& Corpus::expert(std::string_view id) const {
  const Expert* e = find(id);
  if (!e) throw Error("unknown expert id '" + std::string(id) + "'");
  return *e;
}

std::vector<std::string> Corpus::candidate_set(
    std::string_view query_name) const {
  std::set<std::string> ids;
  if (split_whitespace(query_name).empty()) return {};
  for (const auto& v : generate_name_variants(query_name)) {
    auto it = by_variant_.find(v);
    if (it == by_variant_.end()) continue;
    for (std::size_t i : it->second) ids.insert(experts_[i].id);
  }
  return {ids.begin(), ids.end()};
}

SupportLookup::SupportLookup(const Corpus& corpus) { add(corpus); }

void SupportLookup::add(const Corpus& corpus) {
  for (const auto& e : corpus.experts()) add(e.id, e.support);
}

void SupportLookup::add(std::span<const ExternalMention> mentions) {
  for (const auto& m : mentions) add(m.mention_id, m.support);
}

void SupportLookup::add(const std::string& owner_id,
                        std::span<const SupportInfo> support) {
  owners_[owner_id] = support;
}

std::span<const SupportInfo> SupportLookup::support(
    std::string_view owner_id) const {
  auto it = owners_.find(owner_id);
  if (it == owners_.end()) {
    throw Error("unknown support owner '" + std::string(owner_id) + "'");
  }
  return it->second;
}

bool SupportLookup::contains(std::string_view owner_id) const {
  return owners_.find(owner_id) != owners_.end();
}

Schema parse_schema(std::string_view name) {
  if (name == "reference") return Schema::kReference;
  if (name == "news") return Schema::kNews;
  if (name == "linkedin") return Schema::kLinkedIn;
  throw Error("unknown schema '" + std::string(name) + "'");
}

SupportInfo make_paper(std::string_view title,
                       std::span<const std::string> keywords,
                       std::span<const std::string> authors,
                       std::string_view org, std::string_view venue,
                       std::optional<int> year) {
  SupportInfo info;
  info.kind = SupportKind::kPaper;
  info.fields.push_back({"title", std::string(title)});
  for (const auto& k : keywords) info.fields.push_back({"keyword", k});
  for (const auto& a : authors) info.fields.push_back({"author", a});
  info.fields.push_back({"org", std::string(org)});
  info.fields.push_back({"venue", std::string(venue)});
  if (year) info.fields.push_back({"year", std::to_string(*year)});
  return info;
}

SupportInfo make_sentence(std::string_view text) {
  return SupportInfo{SupportKind::kSentence, {{"sentence", std::string(text)}}};
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    auto begin = current.find_first_not_of(" \t\r\n");
    if (begin != std::string::npos) {
      auto end = current.find_last_not_of(" \t\r\n");
      out.push_back(current.substr(begin, end - begin + 1));
    }
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    current.push_back(text[i]);
    const char c = text[i];
    if ((c == '.' || c == '!' || c == '?') &&
        (i + 1 == text.size() ||
         std::isspace(static_cast<unsigned char>(text[i + 1])))) {
      flush();
    }
  }
  flush();
  return out;
}

namespace {

const json& require(const json& record, const char* key) {
  auto it = record.find(key);
  if (it == record.end()) {
    throw std::invalid_argument(std::string("missing field '") + key + "'");
  }
  return *it;
}

std::string require_string(const json& record, const char* key) {
  const auto& v = require(record, key);
  if (!v.is_string()) {
    throw std::invalid_argument(std::string("field '") + key +
                                "' must be a string");
  }
  return v.get<std::string>();
}

std::vector<std::string> string_list(const json& record, const char* key,
                                     bool required) {
  auto it = record.find(key);
  if (it == record.end()) {
    if (required) {
      throw std::invalid_argument(std::string("missing field '") + key + "'");
    }
    return {};
  }
  if (!it->is_array()) {
    throw std::invalid_argument(std::string("field '") + key +
                                "' must be a list of strings");
  }
  std::vector<std::string> out;
  for (const auto& v : *it) {
    if (!v.is_string()) {
      throw std::invalid_argument(std::string("field '") + key +
                                  "' must be a list of strings");
    }
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::string optional_string(const json& record, const char* key) {
  auto it = record.find(key);
  if (it == record.end() || it->is_null()) return {};
  if (!it->is_string()) {
    throw std::invalid_argument(std::string("field '") + key +
                                "' must be a string");
  }
  return it->get<std::string>();
}

std::optional<std::string> truth_id(const json& record) {
  auto s = optional_string(record, "truth_id");
  if (s.empty()) return std::nullopt;
  return s;
}

SupportInfo parse_paper(const json& p) {
  if (!p.is_object()) throw std::invalid_argument("paper must be an object");
  std::optional<int> year;
  if (auto it = p.find("year"); it != p.end() && !it->is_null()) {
    if (!it->is_number_integer()) {
      throw std::invalid_argument("field 'year' must be an integer");
    }
    year = it->get<int>();
  }
  auto info = make_paper(optional_string(p, "title"),
                         string_list(p, "keywords", false),
                         string_list(p, "authors", false),
                         optional_string(p, "org"),
                         optional_string(p, "venue"), year);
  if (!has_text(info)) throw std::invalid_argument("paper has no text");
  return info;
}

Expert parse_reference(const json& record) {
  Expert e;
  e.id = require_string(record, "id");
  e.name = require_string(record, "name");
  const auto& papers = require(record, "papers");
  if (!papers.is_array() || papers.empty()) {
    throw std::invalid_argument("'papers' must be a non-empty list");
  }
  for (const auto& p : papers) e.support.push_back(parse_paper(p));
  return e;
}

ExternalMention parse_news(const json& record) {
  ExternalMention m;
  m.mention_id = require_string(record, "mention_id");
  m.name = require_string(record, "name");
  auto before = string_list(record, "sentences_before", true);
  auto after = string_list(record, "sentences_after", true);
  const std::size_t skip =
      before.size() > kNewsWindow ? before.size() - kNewsWindow : 0;
  for (std::size_t i = skip; i < before.size(); ++i) {
    if (before[i].empty()) continue;
    m.support.push_back(
        {SupportKind::kSentence, {{"sentence_before", before[i]}}});
  }
  for (std::size_t i = 0; i < after.size() && i < kNewsWindow; ++i) {
    if (after[i].empty()) continue;
    m.support.push_back(
        {SupportKind::kSentence, {{"sentence_after", after[i]}}});
  }
  m.truth_expert_id = truth_id(record);
  return m;
}

ExternalMention parse_linkedin(const json& record) {
  ExternalMention m;
  m.mention_id = require_string(record, "user_id");
  m.name = require_string(record, "name");
  auto affiliation = optional_string(record, "affiliation");
  if (!affiliation.empty()) {
    m.support.push_back(
        {SupportKind::kAttribute, {{"affiliation", affiliation}}});
  }
  auto skills = string_list(record, "skills", false);
  if (!skills.empty()) {
    std::string joined;
    for (std::size_t i = 0; i < skills.size(); ++i) {
      if (i) joined += ", ";
      joined += skills[i];
    }
    m.support.push_back({SupportKind::kAttribute, {{"skills", joined}}});
  }
  for (auto& s : split_sentences(optional_string(record, "summary"))) {
    m.support.push_back({SupportKind::kSentence, {{"summary", s}}});
  }
  m.truth_expert_id = truth_id(record);
  return m;
}

template <typename Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto record = json::parse(line);
      if (!record.is_object()) {
        throw std::invalid_argument("record must be a JSON object");
      }
      fn(record, line_no);
    } catch (const json::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    } catch (const std::invalid_argument& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
}

}  // namespace

Corpus load_reference_corpus(const std::filesystem::path& path) {
  std::vector<Expert> experts;
  std::set<std::string> seen;
  for_each_record(path, [&](const json& record, std::size_t) {
    experts.push_back(parse_reference(record));
  });
  for (const auto& e : experts) {
    if (!seen.insert(e.id).second) {
      throw Error(path.string() + ": duplicate expert id '" + e.id + "'");
    }
  }
  return Corpus(std::move(experts));
}

std::vector<ExternalMention> load_mentions(const std::filesystem::path& path,
                                           Schema schema) {
  if (schema == Schema::kReference) {
    throw Error("load_mentions: reference schema holds experts, not mentions");
  }
  std::vector<ExternalMention> mentions;
  for_each_record(path, [&](const json& record, std::size_t) {
    mentions.push_back(schema == Schema::kNews ? parse_news(record)
                                               : parse_linkedin(record));
  });
  std::set<std::string> seen;
  for (const auto& m : mentions) {
    if (!seen.insert(m.mention_id).second) {
      throw Error(path.string() + ": duplicate mention id '" + m.mention_id +
                  "'");
    }
  }
  return mentions;
}

json paper_to_json(const SupportInfo& info) {
  json p = json::object();
  json keywords = json::array();
  json authors = json::array();
  for (const auto& f : info.fields) {
    if (f.name == "keyword") {
      keywords.push_back(f.value);
    } else if (f.name == "author") {
      authors.push_back(f.value);
    }
  }
  p["title"] = std::string(info.field("title"));
  p["keywords"] = keywords;
  p["authors"] = authors;
  p["org"] = std::string(info.field("org"));
  p["venue"] = std::string(info.field("venue"));
  if (auto year = info.field("year"); !year.empty()) {
    p["year"] = std::stoi(std::string(year));
  }
  return p;
}

SupportInfo paper_from_json(const json& paper) {
  try {
    return parse_paper(paper);
  } catch (const std::invalid_argument& e) {
    throw Error(e.what());
  }
}

namespace {

void write_lines(const std::filesystem::path& path,
                 const std::vector<json>& records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  for (const auto& r : records) out << r.dump() << '\n';
}

}  // namespace

void save_reference_corpus(const Corpus& corpus,
                           const std::filesystem::path& path) {
  std::vector<json> records;
  for (const auto& e : corpus.experts()) {
    json papers = json::array();
    for (const auto& s : e.support) papers.push_back(paper_to_json(s));
    records.push_back({{"id", e.id}, {"name", e.name}, {"papers", papers}});
  }
  write_lines(path, records);
}

void save_mentions(std::span<const ExternalMention> mentions, Schema schema,
                   const std::filesystem::path& path) {
  std::vector<json> records;
  for (const auto& m : mentions) {
    json r;
    if (schema == Schema::kNews) {
      json before = json::array();
      json after = json::array();
      for (const auto& s : m.support) {
        for (const auto& f : s.fields) {
          (f.name == "sentence_before" ? before : after).push_back(f.value);
        }
      }
      r = {{"mention_id", m.mention_id},
           {"name", m.name},
           {"sentences_before", before},
           {"sentences_after", after}};
    } else if (schema == Schema::kLinkedIn) {
      std::string affiliation;
      std::vector<std::string> skills;
      std::string summary;
      for (const auto& s : m.support) {
        for (const auto& f : s.fields) {
          if (f.name == "affiliation") {
            affiliation = f.value;
          } else if (f.name == "skills") {
            std::string_view rest = f.value;
            while (!rest.empty()) {
              auto pos = rest.find(", ");
              skills.emplace_back(rest.substr(0, pos));
              if (pos == std::string_view::npos) break;
              rest.remove_prefix(pos + 2);
            }
          } else {
            if (!summary.empty()) summary += ' ';
            summary += f.value;
          }
        }
      }
      r = {{"user_id", m.mention_id},  {"name", m.name},
           {"affiliation", affiliation}, {"skills", skills},
           {"summary", summary}};
    } else {
      throw Error("save_mentions: reference schema holds experts");
    }
    if (m.truth_expert_id) r["truth_id"] = *m.truth_expert_id;
    records.push_back(std::move(r));
  }
  write_lines(path, records);
}

ExpertInstance sample_instance(const Expert& expert, std::size_t cap,
                               Rng& rng) {
  if (cap == 0) throw Error("sample_instance: cap must be >= 1");
  const std::size_t n = expert.support.size();
  if (n == 0) {
    throw Error("sample_instance: expert '" + expert.id + "' has no support");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t take = std::min(n, cap);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(take);
  return {expert.id, std::move(idx)};
}

std::size_t triplet_eligibility_threshold(std::size_t cap) { return 2 * cap; }

std::vector<TripletBatch> sample_triplets(const Corpus& corpus,
                                          const TripletSampling& sampling,
                                          Rng& rng) {
  if (sampling.cap == 0) throw Error("sample_triplets: cap must be >= 1");
  const std::size_t threshold = triplet_eligibility_threshold(sampling.cap);
  const auto& experts = corpus.experts();
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < experts.size(); ++i) {
    if (experts[i].support.size() >= threshold) eligible.push_back(i);
  }
  if (eligible.size() < 2) {
    throw Error("sample_triplets: need at least 2 experts with >= " +
                std::to_string(threshold) + " support items, found " +
                std::to_string(eligible.size()));
  }

  std::unordered_map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < experts.size(); ++i) {
    index_of[experts[i].id] = i;
  }

  std::vector<TripletBatch> out;
  out.reserve(eligible.size() * sampling.per_expert);
  for (std::size_t ei : eligible) {
    const Expert& e = experts[ei];
    std::vector<std::size_t> same_name;
    for (const auto& id : corpus.candidate_set(e.name)) {
      if (id != e.id) same_name.push_back(index_of.at(id));
    }
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < experts.size(); ++j) {
      if (j != ei) others.push_back(j);
    }

    for (std::size_t a = 0; a < sampling.per_expert; ++a) {
      // Disjoint anchor and positive from one shuffled permutation.
      std::vector<std::size_t> idx(e.support.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      TripletBatch t;
      t.anchor = {e.id, {idx.begin(), idx.begin() + sampling.cap}};
      t.positive = {e.id,
                    {idx.begin() + sampling.cap,
                     idx.begin() + 2 * sampling.cap}};

      std::vector<std::size_t> chosen;
      std::vector<std::size_t> pool = same_name;
      std::shuffle(pool.begin(), pool.end(), rng);
      for (std::size_t j : pool) {
        if (chosen.size() == sampling.n_neg) break;
        chosen.push_back(j);
      }
      std::vector<std::size_t> rest;
      for (std::size_t j : others) {
        if (std::find(chosen.begin(), chosen.end(), j) == chosen.end()) {
          rest.push_back(j);
        }
      }
      std::shuffle(rest.begin(), rest.end(), rng);
      for (std::size_t j : rest) {
        if (chosen.size() == sampling.n_neg) break;
        chosen.push_back(j);
      }
      // Fewer distinct experts than n_neg: draw with replacement.
      std::uniform_int_distribution<std::size_t> any(0, others.size() - 1);
      while (chosen.size() < sampling.n_neg) chosen.push_back(others[any(rng)]);

      for (std::size_t j : chosen) {
        t.negatives.push_back(sample_instance(experts[j], sampling.cap, rng));
      }
      out.push_back(std::move(t));
    }
  }
  return out;
}

}  // namespace explink
