#pragma once

#include <Eigen/Dense>
#include <span>

#include "mialab/image.hpp"
#include "mialab/metrics/features.hpp"

namespace mialab::metrics {

// Zero-shot-style reference scorer: cosine similarity of fixed random
// features to per-class prototypes (mean exemplar embeddings).
struct Prototypes {
  Eigen::VectorXd member;
  Eigen::VectorXd non_member;

  Prototypes swapped() const { return {non_member, member}; }
};

inline constexpr int kPrototypeExemplars = 16;

Prototypes build_prototypes(const RandomEmbedder& phi, std::span<const ImageBuf> member_exemplars,
                            std::span<const ImageBuf> non_member_exemplars);

// cos(phi(img), member) - cos(phi(img), non_member); higher is more member-like.
double baseline_score(const Eigen::VectorXd& features, const Prototypes& protos);
double baseline_score(const RandomEmbedder& phi, const ImageBuf& img, const Prototypes& protos);

}  // namespace mialab::metrics
