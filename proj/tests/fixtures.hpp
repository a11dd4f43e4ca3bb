#pragma once

#include "fsim/extractor.hpp"

namespace fsim::testing {

inline MelSpecConfig small_mel() {
  MelSpecConfig m;
  m.n_mels = 16;
  return m;
}

inline LcnnConfig small_lcnn(std::size_t embedding = 8) {
  LcnnConfig c;
  c.n_mels = 16;
  c.channels = {4, 8};
  c.kernels = {3, 3};
  c.embedding_dim = embedding;
  return c;
}

inline FeatureExtractor small_extractor(std::size_t classes, Rng& rng, std::size_t embedding = 8) {
  return FeatureExtractor::create_lcnn(small_mel(), small_lcnn(embedding), classes, rng);
}

inline Segment noise_segment(std::size_t n, Rng& rng, std::string track = {}, std::size_t start = 0) {
  Segment s;
  s.samples.resize(n);
  for (auto& v : s.samples) v = static_cast<float>(uniform(rng, -0.5, 0.5));
  s.origin = {std::move(track), start};
  return s;
}

}  // namespace fsim::testing
