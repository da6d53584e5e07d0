#include "mialab/metrics/baseline.hpp"

#include "mialab/error.hpp"

namespace mialab::metrics {

Prototypes build_prototypes(const RandomEmbedder& phi, std::span<const ImageBuf> member_exemplars,
                            std::span<const ImageBuf> non_member_exemplars) {
  require(!member_exemplars.empty() && !non_member_exemplars.empty(), ErrorKind::kData, "prototypes need exemplars for both classes");
  Prototypes p;
  p.member = phi.embed(member_exemplars).colwise().mean().transpose();
  p.non_member = phi.embed(non_member_exemplars).colwise().mean().transpose();
  return p;
}

namespace {

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) return 0.0;
  return a.dot(b) / (na * nb);
}

}  // namespace

double baseline_score(const Eigen::VectorXd& features, const Prototypes& protos) {
  if (features.size() != protos.member.size() || features.size() != protos.non_member.size())
    fail(ErrorKind::kDimension, "prototype and feature dimensions differ");
  return cosine(features, protos.member) - cosine(features, protos.non_member);
}

double baseline_score(const RandomEmbedder& phi, const ImageBuf& img, const Prototypes& protos) {
  return baseline_score(phi.embed(img), protos);
}

}  // namespace mialab::metrics
