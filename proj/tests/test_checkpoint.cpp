#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "cseg/checkpoint.hpp"
#include "cseg/network.hpp"
#include "cseg/rng.hpp"

using cseg::CheckpointError;
using cseg::Fcn;
using cseg::FormatError;
using cseg::NetworkConfig;
using cseg::Rng;

namespace {

namespace fs = std::filesystem;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

fs::path temp_path(const char* name) {
  return fs::temp_directory_path() / name;
}

Fcn make_trained_like_net(int K, uint64_t seed) {
  NetworkConfig cfg;
  cfg.K = K;
  Fcn net = cseg::build_network<float>(cfg, seed);
  Rng rng(seed + 1);
  for (auto& s : net.stats) {
    for (auto& v : s.mean.data) v = static_cast<float>(rng.gaussian(0.0, 0.3));
    for (auto& v : s.var.data) v = static_cast<float>(rng.uniform(0.5, 2.0));
  }
  net.mark_stats_initialised(true);
  net.trained_iterations = 1234;
  return net;
}

}  // namespace

TEST_CASE("checkpoint survives a round trip bit for bit") {
  Fcn net = make_trained_like_net(4, 21);
  auto p1 = temp_path("cseg_ckpt_a.fcnc");
  auto p2 = temp_path("cseg_ckpt_b.fcnc");
  cseg::save_checkpoint(net, p1.string());

  Fcn back = cseg::load_checkpoint(p1.string());
  REQUIRE(back.K == 4);
  REQUIRE(back.trained_iterations == 1234);
  REQUIRE(back.stats_initialised());
  REQUIRE(back.params.size() == net.params.size());
  for (size_t i = 0; i < net.params.size(); ++i) {
    REQUIRE(back.params[i].name == net.params[i].name);
    REQUIRE(back.params[i].value.shape == net.params[i].value.shape);
    REQUIRE(back.params[i].value.data == net.params[i].value.data);
  }
  for (size_t i = 0; i < net.stats.size(); ++i) {
    REQUIRE(back.stats[i].mean.data == net.stats[i].mean.data);
    REQUIRE(back.stats[i].var.data == net.stats[i].var.data);
  }

  cseg::save_checkpoint(back, p2.string());
  REQUIRE(read_file(p1) == read_file(p2));
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("untrained checkpoint keeps statistics uninitialised") {
  NetworkConfig cfg;
  Fcn net = cseg::build_network<float>(cfg, 3);
  auto p = temp_path("cseg_ckpt_fresh.fcnc");
  cseg::save_checkpoint(net, p.string());
  Fcn back = cseg::load_checkpoint(p.string());
  REQUIRE(back.trained_iterations == 0);
  REQUIRE_FALSE(back.stats_initialised());
  fs::remove(p);
}

TEST_CASE("truncated checkpoints are rejected as format errors") {
  Fcn net = make_trained_like_net(2, 40);
  auto p = temp_path("cseg_ckpt_trunc.fcnc");
  cseg::save_checkpoint(net, p.string());
  std::string whole = read_file(p);

  for (size_t keep : {size_t{0}, size_t{3}, size_t{11}, whole.size() / 3,
                      whole.size() - 5, whole.size() - 1}) {
    write_file(p, whole.substr(0, keep));
    REQUIRE_THROWS_AS(cseg::load_checkpoint(p.string()), FormatError);
  }
  fs::remove(p);
}

TEST_CASE("bad magic or version is a format error") {
  Fcn net = make_trained_like_net(2, 41);
  auto p = temp_path("cseg_ckpt_magic.fcnc");
  cseg::save_checkpoint(net, p.string());
  std::string whole = read_file(p);

  std::string mangled = whole;
  mangled[0] = 'X';
  write_file(p, mangled);
  REQUIRE_THROWS_AS(cseg::load_checkpoint(p.string()), FormatError);

  mangled = whole;
  mangled[4] = 9;  // unknown version
  write_file(p, mangled);
  REQUIRE_THROWS_AS(cseg::load_checkpoint(p.string()), FormatError);
  fs::remove(p);
}

TEST_CASE("class-count mismatch is reported explicitly") {
  Fcn net = make_trained_like_net(4, 50);
  auto p = temp_path("cseg_ckpt_k.fcnc");
  cseg::save_checkpoint(net, p.string());
  REQUIRE_THROWS_AS(cseg::load_checkpoint(p.string(), 2), CheckpointError);
  try {
    cseg::load_checkpoint(p.string(), 2);
  } catch (const CheckpointError& e) {
    std::string msg = e.what();
    REQUIRE(msg.find("K=4") != std::string::npos);
    REQUIRE(msg.find("K=2") != std::string::npos);
  }
  fs::remove(p);
}

TEST_CASE("missing file is an io error") {
  REQUIRE_THROWS_AS(cseg::load_checkpoint("/nonexistent/nope.fcnc"),
                    cseg::IoError);
}
