#include "mialab/ldm/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "mialab/rng.hpp"
#include "mialab/synthdata/caption.hpp"

namespace mialab::ldm {

Vocab Vocab::build(std::vector<std::string> tokens, int dim, uint64_t seed) {
  Vocab v;
  v.tokens = std::move(tokens);
  if (std::find(v.tokens.begin(), v.tokens.end(), kUnk) == v.tokens.end()) v.tokens.push_back(kUnk);
  v.dim = dim;
  v.table.assign(v.tokens.size() * dim, 0.0f);
  if (static_cast<int>(v.tokens.size()) <= dim) {
    // Distinct basis vectors in a seeded order. A projection trained with an
    // elementwise optimizer then never moves its response to tokens absent
    // from the training captions.
    std::vector<int> axes(static_cast<size_t>(dim));
    std::iota(axes.begin(), axes.end(), 0);
    Rng rng(derive_seed(seed, "basis"));
    std::shuffle(axes.begin(), axes.end(), rng);
    for (size_t i = 0; i < v.tokens.size(); ++i) v.table[i * dim + axes[i]] = 1.0f;
    return v;
  }
  for (size_t i = 0; i < v.tokens.size(); ++i) {
    Rng rng(derive_seed(seed, v.tokens[i]));
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> vec(dim);
    double norm = 0;
    for (auto& x : vec) {
      x = nd(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (int d = 0; d < dim; ++d) v.table[i * dim + d] = static_cast<float>(vec[d] / norm);
  }
  return v;
}

Vocab Vocab::default_vocab(int dim, uint64_t seed) {
  std::vector<std::string> tokens = {"a", "of", "headshot", "person"};
  for (const auto& [src, tok] : synth::default_template().institution_tokens) tokens.push_back(tok);
  for (const char* hair : {"dark", "blond", "red", "gray"}) tokens.push_back(std::string(hair) + "-haired");
  tokens.push_back(kUnk);
  return build(std::move(tokens), dim, seed);
}

int Vocab::index_of(const std::string& token) const {
  int unk = -1;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == token) return static_cast<int>(i);
    if (tokens[i] == kUnk) unk = static_cast<int>(i);
  }
  return unk;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

PromptEmbedding null_embedding(const Vocab& vocab) { return PromptEmbedding(static_cast<size_t>(vocab.dim), 0.0f); }

PromptEmbedding embed_prompt(const std::string& text, const Vocab& vocab) {
  auto toks = tokenize(text);
  PromptEmbedding e = null_embedding(vocab);
  if (toks.empty()) return e;
  std::vector<double> acc(vocab.dim, 0.0);
  for (const auto& t : toks) {
    const int idx = vocab.index_of(t);
    for (int d = 0; d < vocab.dim; ++d) acc[d] += vocab.table[size_t(idx) * vocab.dim + d];
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(toks.size()));
  for (int d = 0; d < vocab.dim; ++d) e[d] = static_cast<float>(acc[d] * scale);
  return e;
}

}  // namespace mialab::ldm
