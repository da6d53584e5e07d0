#pragma once

#include <map>
#include <string>

#include "mialab/synthdata/corpus.hpp"
#include "mialab/synthdata/manifest.hpp"

namespace mialab::synth {

// Captions have the form "a <institution token> headshot of a <attributes>".
struct CaptionTemplate {
  std::map<std::string, std::string> institution_tokens{{"A", "instA"}, {"B", "instB"}, {"WILD", "wild"}};

  const std::string& token(const std::string& source) const;
  // "a instA headshot of a"
  std::string prefix(const std::string& source) const;
  // "a instA headshot", the generation prompt
  std::string prompt(const std::string& source) const;
};

const CaptionTemplate& default_template();

std::string caption(const Record& record, const CaptionTemplate& tmpl = default_template());

// Re-captions every record as if it came from `source` (the fine-tuning label).
DatasetManifest recaption(const DatasetManifest& m, const std::string& source, const CaptionTemplate& tmpl = default_template());

// Returns the shared "a <tok> headshot of a" prefix, or nullopt if captions
// disagree.
std::optional<std::string> common_prefix(const DatasetManifest& m, const CaptionTemplate& tmpl = default_template());

}  // namespace mialab::synth
