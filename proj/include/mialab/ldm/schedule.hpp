#pragma once

#include <span>
#include <vector>

namespace mialab::ldm {

// DDPM variance schedule. Timesteps are 1-based: beta(1) .. beta(T).
struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  int timesteps() const { return static_cast<int>(betas.size()); }
  double alpha_bar(int t) const { return alpha_bars.at(static_cast<size_t>(t - 1)); }

  static NoiseSchedule from_betas(std::vector<double> betas);
  // Linear betas; by default the 1000-step DDPM range rescaled to T steps.
  static NoiseSchedule linear(int timesteps, double beta_start, double beta_end);

  // betas in (0,1), non-decreasing; alpha_bar strictly decreasing; alpha_bar_T < 0.01.
  void validate() const;
};

double default_beta_start(int timesteps);
double default_beta_end(int timesteps);

// sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps
std::vector<float> forward_diffuse(std::span<const float> x0, int t, std::span<const float> eps, const NoiseSchedule& sched);
// Same formula with abar given directly.
std::vector<float> forward_diffuse(std::span<const float> x0, double alpha_bar, std::span<const float> eps);

// eps_uncond + s * (eps_cond - eps_uncond), no clamping.
inline double cfg_noise(double eps_uncond, double eps_cond, double s) { return eps_uncond + s * (eps_cond - eps_uncond); }
std::vector<float> cfg_noise(std::span<const float> eps_uncond, std::span<const float> eps_cond, double s);
void cfg_noise_into(std::span<const float> eps_uncond, std::span<const float> eps_cond, double s, std::span<float> out);

// Strided inference timesteps t_i = floor(i*T/steps), i = 1..steps.
std::vector<int> inference_timesteps(int timesteps, int steps);

}  // namespace mialab::ldm
