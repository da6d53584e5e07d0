#include "mialab/ldm/schedule.hpp"

#include <cmath>

#include "mialab/error.hpp"

namespace mialab::ldm {

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  require(!betas.empty(), ErrorKind::kConfig, "schedule needs at least one timestep");
  NoiseSchedule s;
  s.betas = std::move(betas);
  double prod = 1.0;
  for (double b : s.betas) {
    s.alphas.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bars.push_back(prod);
  }
  return s;
}

NoiseSchedule NoiseSchedule::linear(int timesteps, double beta_start, double beta_end) {
  require(timesteps >= 1, ErrorKind::kConfig, "timesteps must be >= 1");
  std::vector<double> b(static_cast<size_t>(timesteps));
  for (int i = 0; i < timesteps; ++i)
    b[i] = timesteps == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / double(timesteps - 1);
  return from_betas(std::move(b));
}

double default_beta_start(int timesteps) { return std::min(0.5, 1e-4 * 1000.0 / timesteps); }
double default_beta_end(int timesteps) { return std::min(0.5, 0.02 * 1000.0 / timesteps); }

void NoiseSchedule::validate() const {
  for (size_t i = 0; i < betas.size(); ++i) {
    require(betas[i] > 0.0 && betas[i] < 1.0, ErrorKind::kConfig, "betas must lie in (0,1)");
    if (i > 0) {
      require(betas[i] >= betas[i - 1], ErrorKind::kConfig, "betas must be non-decreasing");
      require(alpha_bars[i] < alpha_bars[i - 1], ErrorKind::kConfig, "alpha_bar must be strictly decreasing");
    }
  }
  require(alpha_bars.back() < 0.01, ErrorKind::kConfig,
          "alpha_bar_T = " + std::to_string(alpha_bars.back()) + " must be < 0.01; raise beta_end or timesteps");
}

std::vector<float> forward_diffuse(std::span<const float> x0, double alpha_bar, std::span<const float> eps) {
  if (x0.size() != eps.size()) fail(ErrorKind::kDimension, "forward_diffuse: noise shape differs from x0");
  const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
  std::vector<float> out(x0.size());
  for (size_t i = 0; i < x0.size(); ++i) out[i] = static_cast<float>(a * x0[i] + b * eps[i]);
  return out;
}

std::vector<float> forward_diffuse(std::span<const float> x0, int t, std::span<const float> eps, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.timesteps()) fail(ErrorKind::kConfig, "timestep " + std::to_string(t) + " outside 1..T");
  return forward_diffuse(x0, sched.alpha_bar(t), eps);
}

void cfg_noise_into(std::span<const float> eps_uncond, std::span<const float> eps_cond, double s, std::span<float> out) {
  if (eps_uncond.size() != eps_cond.size() || out.size() != eps_cond.size())
    fail(ErrorKind::kDimension, "cfg_noise: conditional and unconditional shapes differ");
  require(s >= 0.0, ErrorKind::kConfig, "guidance scale must be non-negative");
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(cfg_noise(double(eps_uncond[i]), double(eps_cond[i]), s));
}

std::vector<float> cfg_noise(std::span<const float> eps_uncond, std::span<const float> eps_cond, double s) {
  std::vector<float> out(eps_cond.size());
  cfg_noise_into(eps_uncond, eps_cond, s, out);
  return out;
}

std::vector<int> inference_timesteps(int timesteps, int steps) {
  if (steps < 1 || steps > timesteps)
    fail(ErrorKind::kConfig, "inference steps must lie in 1.." + std::to_string(timesteps) + ", got " + std::to_string(steps));
  std::vector<int> ts;
  for (int i = 1; i <= steps; ++i) ts.push_back(static_cast<int>((static_cast<long>(i) * timesteps) / steps));
  return ts;
}

}  // namespace mialab::ldm
