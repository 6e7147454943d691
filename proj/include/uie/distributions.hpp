#pragma once

#include <cstddef>
#include <vector>

namespace uie {

// Diagonal Gaussian over an N-dimensional latent space, parameterized by a
// mean vector and a vector of standard deviations.
class DiagonalGaussian {
public:
    DiagonalGaussian(std::vector<double> mean, std::vector<double> scale);

    std::size_t dim() const { return mean_.size(); }
    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& scale() const { return scale_; }

private:
    std::vector<double> mean_;
    std::vector<double> scale_;
};

// A realized latent draw: the mean-statistic sample, the std-statistic
// sample, and the joint log-density of the pair under the generating
// distribution pair.
struct LatentSample {
    std::vector<double> a;
    std::vector<double> b;
    double log_density = 0.0;
};

// Reparameterized draw: mean + scale * noise.
std::vector<double> sample(const DiagonalGaussian& dist, const std::vector<double>& noise);

// Joint log-density of `point` under `dist`.
double log_density(const DiagonalGaussian& dist, const std::vector<double>& point);

// Closed-form KL(p || q) for diagonal Gaussians. Non-negative.
double kl_divergence(const DiagonalGaussian& p, const DiagonalGaussian& q);

} // namespace uie
