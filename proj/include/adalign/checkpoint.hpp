#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "adalign/nets.hpp"
#include "adalign/tensor.hpp"

namespace adalign {

// Parameter checkpoint: plain-text header (meta lines, then one line per
// tensor with name, shape and byte offset) followed by a raw block of
// little-endian 64-bit floats. Round-trips bit-exactly.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  static Checkpoint from_params(const NamedParams& params,
                                std::map<std::string, std::string> meta = {});
  void restore_into(const NamedParams& params) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace adalign
