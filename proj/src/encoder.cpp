#include "explink/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "explink/error.hpp"

namespace explink {

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c >= 0x80 || std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Vocab::Vocab() {
  add("[PAD]");
  add("[UNK]");
  add("[CLS]");
  add("[SEP]");
}

void Vocab::add(std::string token) {
  const int id = static_cast<int>(tokens_.size());
  if (!ids_.emplace(token, id).second) {
    throw Error("vocab: duplicate token '" + token + "'");
  }
  tokens_.push_back(std::move(token));
}

Vocab Vocab::build(std::span<const std::string> documents,
                   std::size_t min_freq) {
  if (documents.empty()) throw Error("build_vocab: no documents");
  std::map<std::string, std::size_t> freq;
  for (const auto& doc : documents) {
    for (auto& t : split_tokens(doc)) ++freq[std::move(t)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : freq) {
    if (n >= min_freq) ranked.emplace_back(tok, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) {
                     return a.second > b.second;
                   });
  Vocab v;
  for (auto& [tok, n] : ranked) v.add(tok);
  return v;
}

int Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write vocab '" + path.string() + "'");
  for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open vocab '" + path.string() + "'");
  Vocab v;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no <= 4) {
      if (line != v.tokens_[line_no - 1]) {
        throw ParseError(path.string(), line_no,
                         "expected special token " + v.tokens_[line_no - 1]);
      }
      continue;
    }
    v.add(line);
  }
  return v;
}

std::string support_text(const SupportInfo& info) {
  std::string out;
  for (const auto& f : info.fields) {
    if (f.name == "year" || f.value.empty()) continue;
    if (!out.empty()) out.push_back(' ');
    out += f.value;
  }
  return out;
}

std::vector<std::string> support_texts(const Corpus& corpus) {
  std::vector<std::string> out;
  for (const auto& e : corpus.experts()) {
    for (const auto& s : e.support) out.push_back(support_text(s));
  }
  return out;
}

std::vector<std::string> support_texts(
    std::span<const ExternalMention> mentions) {
  std::vector<std::string> out;
  for (const auto& m : mentions) {
    for (const auto& s : m.support) out.push_back(support_text(s));
  }
  return out;
}

std::vector<int> tokenize(const SupportInfo& info, const Vocab& vocab,
                          std::size_t max_len) {
  if (max_len < 3) throw Error("tokenize: max_len must be >= 3");
  std::vector<int> ids{Vocab::kCls};
  const std::size_t budget = max_len - 2;
  for (const auto& f : info.fields) {
    if (f.name == "year") continue;
    for (const auto& t : split_tokens(f.value)) {
      if (ids.size() - 1 == budget) break;
      ids.push_back(vocab.id(t));
    }
  }
  ids.push_back(Vocab::kSep);
  return ids;
}

GeneratorParams::GeneratorParams(const std::string& prefix,
                                 std::size_t vocab_size, std::size_t d_tok,
                                 std::size_t d_out)
    : embedding(prefix + ".embedding", vocab_size, d_tok),
      projection(prefix + ".projection", d_tok, d_out) {}

void GeneratorParams::init(Rng& rng) {
  init_uniform(embedding, 0.05, rng);
  init_xavier(projection, 1.0, rng);
}

void GeneratorParams::copy_values_from(const GeneratorParams& other) {
  if (embedding.rows != other.embedding.rows ||
      embedding.cols != other.embedding.cols ||
      projection.cols != other.projection.cols) {
    throw ShapeError("generator copy: shape mismatch");
  }
  embedding.values = other.embedding.values;
  projection.values = other.projection.values;
}

std::vector<ParamTensor*> GeneratorParams::tensors() {
  return {&embedding, &projection};
}

std::vector<const ParamTensor*> GeneratorParams::tensors() const {
  return {&embedding, &projection};
}

Var embed_mean(Tape& tape, const ParamTensor& table,
               std::span<const int> ids) {
  const std::size_t d = table.cols;
  std::vector<double> y(d, 0.0);
  std::vector<int> kept;
  kept.reserve(ids.size());
  for (int id : ids) {
    if (id == Vocab::kPad) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows) {
      throw ShapeError("embed_mean: token id " + std::to_string(id) +
                       " outside table of " + std::to_string(table.rows) +
                       " rows");
    }
    kept.push_back(id);
  }
  if (kept.empty()) throw Error("encode: token sequence is all PAD");
  for (int id : kept) {
    const double* row = &table.values[static_cast<std::size_t>(id) * d];
    for (std::size_t j = 0; j < d; ++j) y[j] += row[j];
  }
  const double inv = 1.0 / static_cast<double>(kept.size());
  for (auto& v : y) v *= inv;
  const ParamTensor* tp = &table;
  return tape.record(std::move(y), d, 1,
                     [tp, kept = std::move(kept), inv](
                         Tape&, std::span<const double> g) {
                       const std::size_t d = tp->cols;
                       for (int id : kept) {
                         double* row =
                             &tp->grad[static_cast<std::size_t>(id) * d];
                         for (std::size_t j = 0; j < d; ++j) {
                           row[j] += g[j] * inv;
                         }
                       }
                     });
}

Var encode(Tape& tape, const GeneratorParams& gen, std::span<const int> ids) {
  if (ids.empty()) throw Error("encode: empty token sequence");
  Var pooled = embed_mean(tape, gen.embedding, ids);
  Var projected = tape.tanh(tape.linear(gen.projection, pooled));
  return tape.l2_normalize(projected);
}

std::vector<double> encode(const GeneratorParams& gen,
                           std::span<const int> ids) {
  Tape tape;
  Var out = encode(tape, gen, ids);
  auto v = tape.value(out);
  return {v.begin(), v.end()};
}

std::vector<Var> encode_items(Tape& tape, const GeneratorParams& gen,
                              std::span<const SupportInfo> items,
                              const Tokenizer& tokenizer) {
  std::vector<Var> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back(encode(tape, gen, tokenizer(item)));
  return out;
}

std::vector<Var> encode_instance(Tape& tape, const GeneratorParams& gen,
                                 const ExpertInstance& instance,
                                 const SupportLookup& lookup,
                                 const Tokenizer& tokenizer) {
  const auto support = lookup.support(instance.expert_id);
  std::vector<Var> out;
  out.reserve(instance.items.size());
  for (std::size_t idx : instance.items) {
    if (idx >= support.size()) {
      throw Error("encode_instance: item " + std::to_string(idx) +
                  " out of range for '" + instance.expert_id + "' (" +
                  std::to_string(support.size()) + " items)");
    }
    out.push_back(encode(tape, gen, tokenizer(support[idx])));
  }
  return out;
}

std::string item_id(std::string_view owner_id, std::size_t index) {
  return std::string(owner_id) + "#" + std::to_string(index);
}

ImportedEmbeddings ImportedEmbeddings::load(const std::filesystem::path& path,
                                            std::size_t d_out) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open embeddings '" + path.string() + "'");
  ImportedEmbeddings out;
  out.dim_ = d_out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError(path.string(), line_no, "expected id<TAB>vector");
    }
    std::string id = line.substr(0, tab);
    std::vector<double> v;
    std::stringstream ss(line.substr(tab + 1));
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw ParseError(path.string(), line_no, "bad number '" + cell + "'");
      }
    }
    if (v.size() != d_out) {
      throw ParseError(path.string(), line_no,
                       "dimension " + std::to_string(v.size()) +
                           " does not match d_out " + std::to_string(d_out));
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) {
      throw ParseError(path.string(), line_no, "zero vector");
    }
    for (auto& x : v) x /= norm;
    if (!out.vectors_.emplace(std::move(id), std::move(v)).second) {
      throw ParseError(path.string(), line_no, "duplicate id");
    }
  }
  return out;
}

const std::vector<double>& ImportedEmbeddings::lookup(
    std::string_view item_id) const {
  auto it = vectors_.find(std::string(item_id));
  if (it == vectors_.end()) {
    throw Error("no imported embedding for '" + std::string(item_id) + "'");
  }
  return it->second;
}

bool ImportedEmbeddings::contains(std::string_view item_id) const {
  return vectors_.count(std::string(item_id)) > 0;
}

}  // namespace explink
