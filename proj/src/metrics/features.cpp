#include "mialab/metrics/features.hpp"

#include <algorithm>

#include "mialab/nn/convert.hpp"

namespace mialab::metrics {

RandomEmbedder::RandomEmbedder(uint64_t seed)
    : c1_("phi.c1", 3, 16, 3, 2), c2_("phi.c2", 16, 32, 3, 2), c3_("phi.c3", 32, kDim, 3, 2) {
  Rng rng(derive_seed(seed, "random-embedder"));
  c1_.init(rng);
  c2_.init(rng);
  c3_.init(rng);
}

Eigen::MatrixXd RandomEmbedder::embed(std::span<const ImageBuf> images) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), kDim);
  constexpr size_t kChunk = 64;
  nn::ReLU<float> relu;
  for (size_t start = 0; start < images.size(); start += kChunk) {
    const size_t count = std::min(kChunk, images.size() - start);
    auto x = nn::images_to_tensor<float>(images.subspan(start, count), 2.0f, -1.0f);
    auto h = relu.apply(c3_.apply(relu.apply(c2_.apply(relu.apply(c1_.apply(x))))));
    auto pooled = nn::global_avg_pool(h);
    for (size_t i = 0; i < count; ++i)
      for (int d = 0; d < kDim; ++d) out(Eigen::Index(start + i), d) = pooled.data[size_t(d) * count + i];
  }
  return out;
}

Eigen::VectorXd RandomEmbedder::embed(const ImageBuf& image) const {
  return embed(std::span<const ImageBuf>(&image, 1)).row(0).transpose();
}

FeatureStats feature_stats(const Eigen::MatrixXd& features) {
  require(features.rows() >= 2, ErrorKind::kData, "feature statistics need at least 2 samples");
  FeatureStats s;
  s.n = static_cast<int>(features.rows());
  s.mean = features.colwise().mean().transpose();
  Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  s.cov = (centered.transpose() * centered) / double(s.n - 1);
  s.cov = 0.5 * (s.cov + s.cov.transpose());
  return s;
}

FeatureStats extract_features(std::span<const ImageBuf> images, uint64_t extractor_seed) {
  require(images.size() >= 2, ErrorKind::kData, "feature extraction needs at least 2 images");
  RandomEmbedder phi(extractor_seed);
  return feature_stats(phi.embed(images));
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

double fid(const FeatureStats& a, const FeatureStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows() || a.cov.rows() != a.mean.size())
    fail(ErrorKind::kDimension, "FID feature dimensions differ");
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const Eigen::MatrixXd ra = psd_sqrt(a.cov);
  const Eigen::MatrixXd inner = ra * b.cov * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double cross = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross;
  return std::max(0.0, value);
}

}  // namespace mialab::metrics
