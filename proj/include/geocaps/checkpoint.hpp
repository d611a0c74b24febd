#ifndef GEOCAPS_CHECKPOINT_HPP_
#define GEOCAPS_CHECKPOINT_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace geocaps {

// Little-endian binary container, magic "GCAP". The trailer carries an
// FNV-1a checksum and the total length, so truncation and byte flips both
// surface as a corrupt-checkpoint error instead of bad parameters.
struct CheckpointTensor {
  std::string name;
  std::vector<std::int64_t> dims;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t digest = 0;   // digest of the canonical model-config JSON
  std::string config_json;    // the canonical model-config JSON itself
  std::vector<CheckpointTensor> tensors;
  bool has_optimizer = false;
  std::uint64_t adam_step = 0;
  std::vector<CheckpointTensor> adam_m;
  std::vector<CheckpointTensor> adam_v;
};

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ULL);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace geocaps

#endif  // GEOCAPS_CHECKPOINT_HPP_
