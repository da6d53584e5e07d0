#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "mialab/image.hpp"
#include "mialab/nn/layers.hpp"

namespace mialab::metrics {

// Fixed, seeded, never-trained convolutional embedder: 3 stride-2 conv+ReLU
// stages and global average pooling down to a 64-dim vector.
class RandomEmbedder {
 public:
  static constexpr int kDim = 64;

  explicit RandomEmbedder(uint64_t seed);

  // One row per image.
  Eigen::MatrixXd embed(std::span<const ImageBuf> images) const;
  Eigen::VectorXd embed(const ImageBuf& image) const;

 private:
  nn::Conv2d<float> c1_, c2_, c3_;
};

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // sample covariance, (n-1) denominator
  int n = 0;
};

FeatureStats feature_stats(const Eigen::MatrixXd& features);

// Data error for fewer than 2 images.
FeatureStats extract_features(std::span<const ImageBuf> images, uint64_t extractor_seed);

// Frechet distance between Gaussian fits. Dimension error on mismatch.
double fid(const FeatureStats& a, const FeatureStats& b);

// Symmetric PSD square root via eigendecomposition, negative eigenvalues
// clamped to zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m);

}  // namespace mialab::metrics
