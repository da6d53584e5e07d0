#include "mialab/synthdata/caption.hpp"

#include "mialab/error.hpp"

namespace mialab::synth {

const std::string& CaptionTemplate::token(const std::string& source) const {
  auto it = institution_tokens.find(source);
  if (it == institution_tokens.end()) fail(ErrorKind::kConfig, "no caption token for institution '" + source + "'");
  return it->second;
}

std::string CaptionTemplate::prefix(const std::string& source) const { return "a " + token(source) + " headshot of a"; }

std::string CaptionTemplate::prompt(const std::string& source) const { return "a " + token(source) + " headshot"; }

const CaptionTemplate& default_template() {
  static const CaptionTemplate tmpl;
  return tmpl;
}

std::string caption(const Record& record, const CaptionTemplate& tmpl) {
  const auto pre = tmpl.prefix(record.source);
  if (!record.attrs || record.attrs->hair.empty()) return pre + " person";
  return pre + " " + record.attrs->hair + "-haired person";
}

DatasetManifest recaption(const DatasetManifest& m, const std::string& source, const CaptionTemplate& tmpl) {
  DatasetManifest out = m;
  for (auto& r : out.records) {
    Record as = r;
    as.source = source;
    r.caption = caption(as, tmpl);
  }
  return out;
}

std::optional<std::string> common_prefix(const DatasetManifest& m, const CaptionTemplate& tmpl) {
  std::optional<std::string> found;
  for (const auto& r : m.records) {
    std::optional<std::string> mine;
    for (const auto& [src, tok] : tmpl.institution_tokens) {
      auto pre = tmpl.prefix(src);
      if (r.caption.rfind(pre + " ", 0) == 0 || r.caption == pre) mine = pre;
    }
    if (!mine) return std::nullopt;
    if (found && *found != *mine) return std::nullopt;
    found = mine;
  }
  return found;
}

}  // namespace mialab::synth
