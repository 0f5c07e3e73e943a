#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <unistd.h>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "mmgl/checkpoint.hpp"
#include "mmgl/rng.hpp"
#include "mmgl/tensor.hpp"

using namespace mmgl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("ckpt_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<ckpt::NamedTensor> sample_tensors(uint64_t seed) {
  Rng rng(seed);
  return {
      {"embed", Tensor::randn({4, 3}, rng, 0.1)},
      {"bias", Tensor::randn({3}, rng, 0.1)},
      {"gate", Tensor::scalar(0.25)},
  };
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

TEST_CASE("save then restore reproduces values at float precision") {
  TempDir tmp;
  auto tensors = sample_tensors(1);
  ckpt::save_checkpoint(tmp.file("a.mmgl1"), tensors);

  auto loaded = ckpt::load_checkpoint(tmp.file("a.mmgl1"));
  CHECK(loaded.size() == 3);

  auto fresh = sample_tensors(2);  // same shapes, different values
  ckpt::restore_into(loaded, fresh);
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    REQUIRE(fresh[t].tensor.size() == tensors[t].tensor.size());
    for (std::size_t i = 0; i < tensors[t].tensor.size(); ++i) {
      double expect = static_cast<double>(static_cast<float>(tensors[t].tensor.data()[i]));
      CHECK(fresh[t].tensor.data()[i] == expect);
    }
  }
}

TEST_CASE("identical tensors serialize to identical bytes") {
  TempDir tmp;
  ckpt::save_checkpoint(tmp.file("a"), sample_tensors(7));
  ckpt::save_checkpoint(tmp.file("b"), sample_tensors(7));
  CHECK(slurp(tmp.file("a")) == slurp(tmp.file("b")));
  CHECK(slurp(tmp.file("a")).substr(0, 5) == "MMGL1");
}

TEST_CASE("a wrong magic is rejected") {
  TempDir tmp;
  ckpt::save_checkpoint(tmp.file("a"), sample_tensors(3));
  std::string bytes = slurp(tmp.file("a"));
  bytes[0] = 'X';
  std::ofstream(tmp.file("bad"), std::ios::binary) << bytes;
  CHECK_THROWS_AS(ckpt::load_checkpoint(tmp.file("bad")), std::runtime_error);
}

TEST_CASE("a truncated file is rejected") {
  TempDir tmp;
  ckpt::save_checkpoint(tmp.file("a"), sample_tensors(3));
  std::string bytes = slurp(tmp.file("a"));
  std::ofstream(tmp.file("cut"), std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  CHECK_THROWS_AS(ckpt::load_checkpoint(tmp.file("cut")), std::runtime_error);
}

TEST_CASE("restore rejects shape and name mismatches") {
  TempDir tmp;
  ckpt::save_checkpoint(tmp.file("a"), sample_tensors(1));
  auto loaded = ckpt::load_checkpoint(tmp.file("a"));

  SUBCASE("wrong shape") {
    auto fresh = sample_tensors(1);
    fresh[0].tensor = Tensor::zeros({2, 2});
    try {
      ckpt::restore_into(loaded, fresh);
      FAIL("expected a shape error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("embed") != std::string::npos);
    }
  }
  SUBCASE("missing name") {
    auto fresh = sample_tensors(1);
    fresh[1].name = "renamed";
    CHECK_THROWS_AS(ckpt::restore_into(loaded, fresh), std::runtime_error);
  }
  SUBCASE("count mismatch") {
    auto fresh = sample_tensors(1);
    fresh.pop_back();
    CHECK_THROWS_AS(ckpt::restore_into(loaded, fresh), std::runtime_error);
  }
}

TEST_CASE("duplicate tensor names are rejected at save") {
  TempDir tmp;
  std::vector<ckpt::NamedTensor> dup = {
      {"w", Tensor::zeros({1})},
      {"w", Tensor::zeros({1})},
  };
  CHECK_THROWS_AS(ckpt::save_checkpoint(tmp.file("dup"), dup), std::invalid_argument);
}

TEST_CASE("missing file is an error naming the path") {
  try {
    ckpt::load_checkpoint("/nonexistent/nowhere.mmgl1");
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("nowhere") != std::string::npos);
  }
}
