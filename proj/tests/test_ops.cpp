#include <catch2/catch_amalgamated.hpp>

#include "cseg/activation.hpp"
#include "cseg/concat.hpp"
#include "cseg/gradcheck.hpp"
#include "cseg/rng.hpp"
#include "support/fd.hpp"

using cseg::grad_check;
using cseg::Rng;
using cseg::ShapeError;
using cseg::Tensor;
using testsupport::DTensor;
using testsupport::dot;
using testsupport::fill_gaussian;
using testsupport::Pack;

TEST_CASE("relu clamps negatives and keeps positives") {
  Tensor x({1, 1, 1, 4});
  x.data = {-1.0f, 2.0f, 0.0f, -0.5f};
  Tensor y = cseg::relu(x);
  REQUIRE(y.data[0] == 0.0f);
  REQUIRE(y.data[1] == 2.0f);
  REQUIRE(y.data[2] == 0.0f);
  REQUIRE(y.data[3] == 0.0f);
}

TEST_CASE("relu gradient matches finite differences away from the kink") {
  Rng rng(13);
  DTensor x({1, 2, 5, 5}), r({1, 2, 5, 5});
  fill_gaussian(x, rng);
  fill_gaussian(r, rng);
  DTensor y = cseg::relu(x);
  DTensor dx(x.shape);
  cseg::relu_backward(y, r, dx);

  std::vector<int64_t> safe;
  for (size_t i = 0; i < x.data.size(); ++i)
    if (std::abs(x.data[i]) > 1e-2) safe.push_back(static_cast<int64_t>(i));
  REQUIRE(safe.size() > 40);

  Pack pack{{&x}};
  std::vector<double> x0 = pack.flatten();
  auto f = [&](const std::vector<double>& p) {
    pack.scatter(p);
    double l = dot(cseg::relu(x), r);
    pack.scatter(x0);
    return l;
  };
  auto rep = grad_check(f, x0, Pack{{&dx}}.flatten(), 1e-3, 1e-4, safe);
  INFO(rep.summary());
  REQUIRE(rep.pass);
}

TEST_CASE("relu subgradient at 0 is 0") {
  Tensor y({1, 1, 1, 1}, 0.0f);  // relu output at the kink
  Tensor dy({1, 1, 1, 1}, 5.0f);
  Tensor dx({1, 1, 1, 1}, 0.0f);
  cseg::relu_backward(y, dy, dx);
  REQUIRE(dx.data[0] == 0.0f);
}

TEST_CASE("concat_channels single input is the identity") {
  Rng rng(14);
  Tensor x({2, 3, 4, 4});
  for (auto& v : x.data) v = static_cast<float>(rng.gaussian());
  Tensor y = cseg::concat_channels<float>({&x});
  REQUIRE(y.shape == x.shape);
  REQUIRE(y.data == x.data);
}

TEST_CASE("concat_channels preserves order and counts channels") {
  Tensor a({1, 2, 2, 2}, 1.0f), b({1, 3, 2, 2}, 2.0f);
  Tensor y = cseg::concat_channels<float>({&a, &b});
  REQUIRE(y.shape == std::vector<int64_t>{1, 5, 2, 2});
  for (int64_t i = 0; i < 8; ++i) REQUIRE(y.data[static_cast<size_t>(i)] == 1.0f);
  for (int64_t i = 8; i < 20; ++i) REQUIRE(y.data[static_cast<size_t>(i)] == 2.0f);
}

TEST_CASE("concat_channels rejects mismatched spatial extents") {
  Tensor a({1, 2, 4, 4}), b({1, 2, 4, 5});
  REQUIRE_THROWS_AS(cseg::concat_channels<float>({&a, &b}), ShapeError);
  Tensor c({2, 2, 4, 4});
  REQUIRE_THROWS_AS(cseg::concat_channels<float>({&a, &c}), ShapeError);
}

TEST_CASE("concat backward splits an all-ones gradient onto each input") {
  Tensor a({2, 2, 3, 3}), b({2, 5, 3, 3});
  Tensor y = cseg::concat_channels<float>({&a, &b});
  Tensor dy(y.shape, 1.0f);
  Tensor da(a.shape, 0.0f), db(b.shape, 0.0f);
  cseg::concat_channels_backward<float>(dy, {&da, &db});
  for (float v : da.data) REQUIRE(v == 1.0f);
  for (float v : db.data) REQUIRE(v == 1.0f);
}

TEST_CASE("concat round trip recovers per-input gradients exactly") {
  Rng rng(15);
  Tensor a({1, 3, 2, 2}), b({1, 1, 2, 2}), c({1, 4, 2, 2});
  Tensor dy({1, 8, 2, 2});
  for (auto& v : dy.data) v = static_cast<float>(rng.gaussian());
  Tensor da(a.shape, 0.0f), db(b.shape, 0.0f), dc(c.shape, 0.0f);
  cseg::concat_channels_backward<float>(dy, {&da, &db, &dc});
  Tensor rebuilt = cseg::concat_channels<float>({&da, &db, &dc});
  REQUIRE(rebuilt.data == dy.data);
}
