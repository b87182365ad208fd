#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "empl/config.hpp"
#include "empl/encoders.hpp"
#include "empl/meta.hpp"

namespace empl::io {

// Gaussian class clusters. With d_in >= classes the means are the scaled
// simplex vertices radius * e_k; otherwise they sit evenly on a circle of the
// given radius in the first two coordinates (on a line when d_in = 1). Word
// vectors are a fixed random linear map of mean / radius plus Gaussian noise.
struct SynthData {
  Vocabulary vocab;
  std::vector<Vec> means;
  Dataset train;  // observed classes only (every class when none are listed)
  Dataset test;   // every class
  // grid_side^2 points over the first two coordinates (one axis when d_in = 1)
  // and the density of the training mixture at each point. Empty when
  // cluster_std is 0.
  std::vector<Vec> grid;
  std::vector<double> density;
};

SynthData make_synth(const SynthConfig& cfg, std::span<const ClassId> observed, std::uint64_t seed);

}  // namespace empl::io
