#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mialab::ldm {

// Token table with one fixed unit vector per token: distinct one-hot axes
// when the table fits in dim, random directions otherwise. Embeddings are a
// bag of words: sum of token vectors divided by sqrt(token count).
struct Vocab {
  static constexpr const char* kUnk = "<unk>";

  std::vector<std::string> tokens;
  int dim = 32;
  std::vector<float> table;  // tokens.size() x dim

  static Vocab build(std::vector<std::string> tokens, int dim, uint64_t seed);
  // Tokens of the caption template plus <unk>.
  static Vocab default_vocab(int dim, uint64_t seed);

  int index_of(const std::string& token) const;  // unk index when absent
};

using PromptEmbedding = std::vector<float>;

std::vector<std::string> tokenize(const std::string& text);

// Empty text gives the NULL (all-zero) embedding.
PromptEmbedding embed_prompt(const std::string& text, const Vocab& vocab);
PromptEmbedding null_embedding(const Vocab& vocab);

}  // namespace mialab::ldm
