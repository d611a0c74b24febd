#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "geocaps/checkpoint.hpp"
#include "geocaps/config.hpp"
#include "geocaps/csv.hpp"
#include "geocaps/error.hpp"
#include "geocaps/rng.hpp"

using namespace geocaps;
namespace fs = std::filesystem;

namespace {

Checkpoint sample_checkpoint(std::uint64_t seed) {
  Rng rng(seed);
  Checkpoint ckpt;
  ckpt.digest = 0x1234abcd5678ef01ULL;
  ckpt.config_json = "{\"head\":\"caps\"}";
  for (int t = 0; t < 3; ++t) {
    CheckpointTensor tensor;
    tensor.name = "param_" + std::to_string(t);
    tensor.dims = {2, 3};
    for (int i = 0; i < 6; ++i) tensor.values.push_back(static_cast<float>(rng.normal()));
    ckpt.tensors.push_back(tensor);
  }
  ckpt.has_optimizer = true;
  ckpt.adam_step = 17;
  ckpt.adam_m = ckpt.tensors;
  ckpt.adam_v = ckpt.tensors;
  return ckpt;
}

std::string bytes_of(const std::string& path) { return read_text_file(path); }

fs::path tmp(const std::string& name) {
  return fs::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("save -> load -> save is byte-identical") {
  const std::string p1 = tmp("ckpt_a.gcap").string();
  const std::string p2 = tmp("ckpt_b.gcap").string();
  const Checkpoint original = sample_checkpoint(3);
  save_checkpoint(p1, original);
  const Checkpoint loaded = load_checkpoint(p1);
  CHECK(loaded.digest == original.digest);
  CHECK(loaded.config_json == original.config_json);
  CHECK(loaded.adam_step == 17);
  REQUIRE(loaded.tensors.size() == 3);
  CHECK(loaded.tensors[1].name == "param_1");
  CHECK(loaded.tensors[1].dims == std::vector<std::int64_t>{2, 3});
  CHECK(loaded.tensors[1].values == original.tensors[1].values);
  save_checkpoint(p2, loaded);
  CHECK(bytes_of(p1) == bytes_of(p2));
}

TEST_CASE("truncated checkpoint is reported as corrupt, not a crash") {
  const std::string path = tmp("ckpt_trunc.gcap").string();
  save_checkpoint(path, sample_checkpoint(4));
  std::string bytes = bytes_of(path);
  bytes.resize(bytes.size() - 11);
  write_text_file(path, bytes);
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
}

TEST_CASE("a flipped payload byte is caught by the checksum") {
  const std::string path = tmp("ckpt_flip.gcap").string();
  save_checkpoint(path, sample_checkpoint(5));
  std::string bytes = bytes_of(path);
  bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x40);
  write_text_file(path, bytes);
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
}

TEST_CASE("missing checkpoint is a data error") {
  CHECK_THROWS_AS(load_checkpoint(tmp("never_written.gcap").string()), DataError);
}

TEST_CASE("garbage file fails the magic check") {
  const std::string path = tmp("ckpt_garbage.gcap").string();
  std::string noise(256, '\x5a');
  write_text_file(path, noise);
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
}

TEST_CASE("model config digest is stable and canonical") {
  ModelConfig a;
  ModelConfig b;
  CHECK(config_digest(a) == config_digest(b));
  b.capsules.n_out = 16;
  CHECK(config_digest(a) != config_digest(b));
  // canonical JSON parses back to an equivalent config
  const std::string canon = canonical_model_json(a);
  ModelConfig back = model_config_from_json(canon);
  CHECK(config_digest(back) == config_digest(a));
}
