#pragma once

#include <cstddef>
#include <string>

#include "libra/numkernel.hpp"

namespace libra {

// One MIL sample: an unordered set of instance embeddings (rows of
// `features`) carrying a single bag-level label.
struct Bag {
  std::string id;
  std::size_t label = 0;
  Matrix features;  // n x d

  std::size_t instances() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
};

}  // namespace libra
