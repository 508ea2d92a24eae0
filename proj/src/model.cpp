#include "explink/model.hpp"

#include <fstream>

#include "explink/error.hpp"
#include "json.hpp"

namespace explink {

using nlohmann::json;

Classifier::Classifier(const std::string& prefix, std::size_t d_in,
                       std::size_t d_hidden)
    : hidden(prefix + ".hidden", d_in, d_hidden),
      output(prefix + ".output", d_hidden, 2) {}

void Classifier::init(Rng& rng) {
  init_xavier(hidden, 1.0, rng);
  init_xavier(output, 1.0, rng);
}

Var Classifier::logits(Tape& tape, Var x) const {
  return tape.linear(output, tape.leaky_relu(tape.linear(hidden, x), kLeakySlope));
}

std::vector<ParamTensor*> Classifier::tensors() { return {&hidden, &output}; }

std::vector<const ParamTensor*> Classifier::tensors() const {
  return {&hidden, &output};
}

Model::Model(Vocab v, ModelConfig cfg, std::uint64_t seed)
    : vocab(std::move(v)),
      config(cfg),
      shared("shared", vocab.size(), cfg.d_tok, cfg.d_out) {
  Rng rng(seed);
  shared.init(rng);
  metric.init(rng);
}

void Model::enable_adaptation(std::uint64_t seed) {
  Rng rng(seed);
  AdaptParams a{GeneratorParams("private", vocab.size(), config.d_tok,
                                config.d_out),
                Classifier("discriminator", config.d_out, config.disc_hidden),
                Classifier("predictor", config.d_out, config.disc_hidden)};
  a.private_gen.copy_values_from(shared);
  a.discriminator.init(rng);
  a.predictor.init(rng);
  adapt = std::move(a);
}

std::vector<ParamTensor*> Model::tensors() {
  std::vector<ParamTensor*> out = shared.tensors();
  for (auto* p : metric.tensors()) out.push_back(p);
  if (adapt) {
    for (auto* p : adapt->private_gen.tensors()) out.push_back(p);
    for (auto* p : adapt->discriminator.tensors()) out.push_back(p);
    for (auto* p : adapt->predictor.tensors()) out.push_back(p);
  }
  return out;
}

std::vector<const ParamTensor*> Model::tensors() const {
  auto mutable_ptrs = const_cast<Model*>(this)->tensors();
  return {mutable_ptrs.begin(), mutable_ptrs.end()};
}

void Model::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json meta = {{"format", "explink-model"},
               {"version", version},
               {"d_tok", config.d_tok},
               {"d_out", config.d_out},
               {"disc_hidden", config.disc_hidden},
               {"max_len_paper", config.limits.paper},
               {"max_len_ext", config.limits.external},
               {"vocab_size", vocab.size()},
               {"adapted", adapt.has_value()}};
  std::ofstream(dir / "model.json") << meta.dump(2) << '\n';
  vocab.save(dir / "vocab.txt");
  const auto params = tensors();
  save_params(dir / "params.ckpt", params);
}

Model Model::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw Error("no model snapshot at '" + dir.string() + "'");
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("bad model.json in '" + dir.string() + "': " + e.what());
  }
  Model m;
  m.vocab = Vocab::load(dir / "vocab.txt");
  m.config.d_tok = meta.at("d_tok").get<std::size_t>();
  m.config.d_out = meta.at("d_out").get<std::size_t>();
  m.config.disc_hidden = meta.at("disc_hidden").get<std::size_t>();
  m.config.limits.paper = meta.at("max_len_paper").get<std::size_t>();
  m.config.limits.external = meta.at("max_len_ext").get<std::size_t>();
  m.version = meta.at("version").get<int>();
  m.shared = GeneratorParams("shared", m.vocab.size(), m.config.d_tok,
                             m.config.d_out);
  if (meta.at("adapted").get<bool>()) m.enable_adaptation(0);
  auto params = m.tensors();
  load_params(dir / "params.ckpt", params);
  return m;
}

std::vector<double> Model::embed(const SupportInfo& info) const {
  return encode(shared, tokenizer()(info));
}

bool Model::same_parameters(const Model& other) const {
  const auto a = tensors();
  const auto b = other.tensors();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(*a[i] == *b[i])) return false;
  }
  return true;
}

}  // namespace explink
