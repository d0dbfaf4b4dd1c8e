#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "dvstn/ops.hpp"
#include "reference_ops.hpp"

using namespace dvstn;

namespace {

Tensor filled(Shape4 s, std::initializer_list<float> vals) {
  return Tensor(s, std::vector<float>(vals));
}

}  // namespace

TEST_CASE("conv2d 1x1 identity") {
  Tensor x = refops::random_tensor({1, 1, 3, 3}, 7);
  Tensor w({1, 1, 1, 1}, {1.0f});
  Tensor y = conv2d(x, w, {0.0f}, {1, 1, 1, 1, 1, 0, 0, false});
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d all-ones 3x3 over 4x4 of ones") {
  Tensor x({1, 1, 4, 4}, 1.0f);
  Tensor w({1, 1, 3, 3}, 1.0f);
  Tensor y = conv2d(x, w, {0.0f}, {1, 3, 3, 1, 1, 0, 0, false});
  REQUIRE(y.shape() == Shape4{1, 1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) CHECK(y.data()[i] == 9.0f);
}

TEST_CASE("conv2d shape formula: 10x32x32 k7 s2 p3 -> 24x16x16") {
  Tensor x({1, 10, 32, 32}, 0.5f);
  Tensor w({24, 10, 7, 7}, 0.01f);
  Tensor y = conv2d(x, w, std::vector<float>(24, 0.0f), {24, 7, 7, 2, 2, 3, 3, false});
  CHECK(y.shape() == Shape4{1, 24, 16, 16});
}

TEST_CASE("conv2d uses the cross-correlation convention (impulse placement)") {
  // cross-correlation: out(oy,ox) = sum_k ker(ky,kx) * in(oy+ky, ox+kx),
  // so an impulse at (2,2) reproduces the kernel at flipped output indices
  Tensor x({1, 1, 5, 5}, 0.0f);
  x.at(0, 0, 2, 2) = 1.0f;
  Tensor w({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor y = conv2d(x, w, {0.0f}, {1, 3, 3, 1, 1, 0, 0, false});
  REQUIRE(y.shape() == Shape4{1, 1, 3, 3});
  for (int oy = 0; oy < 3; ++oy)
    for (int ox = 0; ox < 3; ++ox)
      CHECK(y.at(0, 0, oy, ox) == w.at(0, 0, 2 - oy, 2 - ox));
}

TEST_CASE("conv2d matches the double-precision reference on random shapes") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 8; ++trial) {
    int cin = 1 + int(rng() % 5), cout = 1 + int(rng() % 6);
    int h = 4 + int(rng() % 6), w = 4 + int(rng() % 6);
    int k = 1 + 2 * int(rng() % 2), s = 1 + int(rng() % 2), p = int(rng() % 2);
    Tensor x = refops::random_tensor({1, cin, h, w}, rng());
    Tensor wt = refops::random_tensor({cout, cin, k, k}, rng());
    std::vector<float> bias(cout, 0.25f);
    Tensor y = conv2d(x, wt, bias, {cout, k, k, s, s, p, p, false});
    auto ref = refops::conv(refops::from_tensor(x),
                            std::vector<float>(wt.data(), wt.data() + wt.size()), bias, cout, k,
                            k, s, s, p, p, nullptr);
    REQUIRE(y.c() == ref.c);
    REQUIRE(y.h() == ref.h);
    REQUIRE(y.w() == ref.w);
    for (std::size_t i = 0; i < y.size(); ++i)
      CHECK_THAT(y.data()[i], Catch::Matchers::WithinRel(ref.v[i], 1e-4) ||
                                  Catch::Matchers::WithinAbs(ref.v[i], 1e-5));
  }
}

TEST_CASE("conv2d shape mismatch and bad geometry are rejected") {
  Tensor x({1, 2, 4, 4}, 1.0f);
  Tensor w({1, 3, 3, 3}, 1.0f);  // wrong input channel count
  CHECK_THROWS_AS(conv2d(x, w, {0.0f}, {1, 3, 3, 1, 1, 0, 0, false}), Error);
  Tensor w2({1, 2, 5, 5}, 1.0f);  // kernel exceeds input, no padding
  CHECK_THROWS_AS(conv2d(x, w2, {0.0f}, {1, 5, 5, 1, 1, 0, 0, false}), Error);
}

TEST_CASE("depthwise 1x1 identity") {
  Tensor x = refops::random_tensor({1, 3, 4, 4}, 11);
  Tensor w({3, 1, 1, 1}, 1.0f);
  Tensor y = depthwise_conv2d(x, w, {0, 0, 0}, {3, 1, 1, 1, 1, 0, 0, true});
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("depthwise per-channel sums") {
  Tensor x({1, 2, 3, 3});
  for (int yx = 0; yx < 9; ++yx) {
    x.data()[yx] = 1.0f;
    x.data()[9 + yx] = 2.0f;
  }
  Tensor w({2, 1, 3, 3}, 1.0f);
  Tensor y = depthwise_conv2d(x, w, {0, 0}, {2, 3, 3, 1, 1, 0, 0, true});
  REQUIRE(y.shape() == Shape4{1, 2, 1, 1});
  CHECK(y.at(0, 0, 0, 0) == 9.0f);
  CHECK(y.at(0, 1, 0, 0) == 18.0f);
}

TEST_CASE("depthwise shape: 48x16x16 3x3 s1 p1 unchanged") {
  Tensor x({1, 48, 16, 16}, 0.1f);
  Tensor w({48, 1, 3, 3}, 0.1f);
  Tensor y = depthwise_conv2d(x, w, std::vector<float>(48, 0.0f), {48, 3, 3, 1, 1, 1, 1, true});
  CHECK(y.shape() == Shape4{1, 48, 16, 16});
}

TEST_CASE("depthwise equals independent single-channel convolutions") {
  Tensor x = refops::random_tensor({1, 5, 7, 6}, 99);
  Tensor w = refops::random_tensor({5, 1, 3, 3}, 100);
  std::vector<float> bias = {0.1f, -0.2f, 0.3f, 0.0f, 1.5f};
  Tensor dw = depthwise_conv2d(x, w, bias, {5, 3, 3, 1, 1, 1, 1, true});
  for (int c = 0; c < 5; ++c) {
    Tensor xc({1, 1, 7, 6});
    std::copy_n(x.plane(0, c), 42, xc.data());
    Tensor wc({1, 1, 3, 3});
    std::copy_n(w.plane(c, 0), 9, wc.data());
    Tensor yc = conv2d(xc, wc, {bias[c]}, {1, 3, 3, 1, 1, 1, 1, false});
    for (std::size_t i = 0; i < yc.size(); ++i) {
      float a = dw.plane(0, c)[i], b = yc.data()[i];
      // summation order is identical, so allow at most tiny contraction noise
      CHECK_THAT(a, Catch::Matchers::WithinRel(b, 1e-6f) || Catch::Matchers::WithinAbs(b, 1e-7f));
    }
  }
}

TEST_CASE("batchnorm identity parameters") {
  Tensor x = refops::random_tensor({1, 2, 3, 3}, 5);
  BatchNormParams p{{1, 1}, {0, 0}, {0, 0}, {1, 1}, 1e-12f};
  Tensor y = batchnorm_infer(x, p);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK_THAT(y.data()[i], Catch::Matchers::WithinAbs(x.data()[i], 1e-6f));
}

TEST_CASE("batchnorm hand value") {
  Tensor x({1, 1, 1, 1}, {2.0f});
  BatchNormParams p{{3}, {1}, {1}, {4}, 1e-12f};
  Tensor y = batchnorm_infer(x, p);
  CHECK_THAT(y.at(0, 0, 0, 0), Catch::Matchers::WithinAbs(2.5f, 1e-5f));
}

TEST_CASE("batchnorm constant channel equal to mean gives beta") {
  Tensor x({1, 2, 2, 2});
  for (int i = 0; i < 4; ++i) {
    x.plane(0, 0)[i] = 3.0f;
    x.plane(0, 1)[i] = -1.0f;
  }
  BatchNormParams p{{2, 2}, {0.5f, -0.75f}, {3.0f, -1.0f}, {1.0f, 2.0f}, 1e-5f};
  Tensor y = batchnorm_infer(x, p);
  for (int i = 0; i < 4; ++i) {
    CHECK_THAT(y.plane(0, 0)[i], Catch::Matchers::WithinAbs(0.5f, 1e-6f));
    CHECK_THAT(y.plane(0, 1)[i], Catch::Matchers::WithinAbs(-0.75f, 1e-6f));
  }
}

TEST_CASE("batchnorm rejects negative variance") {
  Tensor x({1, 1, 1, 1}, {1.0f});
  BatchNormParams p{{1}, {0}, {0}, {-0.5f}, 1e-5f};
  CHECK_THROWS_AS(batchnorm_infer(x, p), Error);
}

TEST_CASE("batchnorm inverse recovers input") {
  Tensor x = refops::random_tensor({2, 3, 4, 4}, 21);
  BatchNormParams p{{1.5f, 0.7f, 2.0f},
                    {0.3f, -0.4f, 1.0f},
                    {0.1f, 0.2f, -0.3f},
                    {0.5f, 1.2f, 0.9f},
                    1e-3f};
  Tensor y = batchnorm_infer(x, p);
  Tensor back(x.shape());
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < 3; ++c) {
      float inv = std::sqrt(p.var[c] + p.eps) / p.gamma[c];
      for (int i = 0; i < 16; ++i)
        back.plane(n, c)[i] = (y.plane(n, c)[i] - p.beta[c]) * inv + p.mean[c];
    }
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK_THAT(back.data()[i],
               Catch::Matchers::WithinRel(x.data()[i], 1e-5f) ||
                   Catch::Matchers::WithinAbs(x.data()[i], 1e-5f));
}

TEST_CASE("pooling basics") {
  Tensor x = filled({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor mx = pool2d(x, PoolKind::max, {2, 2, 2, 2, 0, 0});
  CHECK(mx.at(0, 0, 0, 0) == 4.0f);
  Tensor av = pool2d(x, PoolKind::average, {2, 2, 2, 2, 0, 0});
  CHECK_THAT(av.at(0, 0, 0, 0), Catch::Matchers::WithinAbs(2.5f, 1e-6f));
  Tensor big = refops::random_tensor({1, 6, 9, 5}, 3);
  CHECK(global_avg_pool(big).shape() == Shape4{1, 6, 1, 1});
}

TEST_CASE("average pooling divisor counts only in-bounds samples") {
  // corner window with pad 1 sees 4 of 9 taps on a 4x4 input
  Tensor x({1, 1, 4, 4}, 1.0f);
  Tensor y = pool2d(x, PoolKind::average, {3, 3, 2, 2, 1, 1});
  REQUIRE(y.shape() == Shape4{1, 1, 2, 2});
  CHECK_THAT(y.at(0, 0, 0, 0), Catch::Matchers::WithinAbs(1.0f, 1e-6f));
}

TEST_CASE("strided pool larger than its input is rejected") {
  Tensor x({1, 1, 2, 2}, 1.0f);
  CHECK_THROWS_AS(pool2d(x, PoolKind::max, {3, 3, 2, 2, 1, 1}), Error);
  // stride-1 pools may pad past small inputs
  CHECK_NOTHROW(pool2d(x, PoolKind::average, {3, 3, 1, 1, 1, 1}));
}

TEST_CASE("fully connected") {
  Tensor x({1, 2, 1, 1}, {3.0f, 4.0f});
  Tensor w({1, 2, 1, 1}, {1.0f, 2.0f});
  Tensor y = fully_connected(x, w, {1.0f});
  CHECK(y.at(0, 0, 0, 0) == 12.0f);

  Tensor eye({2, 2, 1, 1}, {1, 0, 0, 1});
  Tensor idy = fully_connected(x, eye, {0, 0});
  CHECK(idy.at(0, 0, 0, 0) == 3.0f);
  CHECK(idy.at(0, 1, 0, 0) == 4.0f);

  Tensor wbad({1, 3, 1, 1}, {1, 2, 3});
  CHECK_THROWS_AS(fully_connected(x, wbad, {0.0f}), Error);
}

TEST_CASE("relu and softmax") {
  Tensor x({1, 2, 1, 1}, {-1.0f, 2.0f});
  Tensor y = relu(x);
  CHECK(y.at(0, 0, 0, 0) == 0.0f);
  CHECK(y.at(0, 1, 0, 0) == 2.0f);

  auto sm = softmax({0.0f, 0.0f});
  CHECK_THAT(sm[0], Catch::Matchers::WithinAbs(0.5f, 1e-6f));
  CHECK_THAT(sm[1], Catch::Matchers::WithinAbs(0.5f, 1e-6f));
}

TEST_CASE("softmax sums to one for large logit magnitudes") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<float> dist(-100.0f, 100.0f);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> logits(2 + rng() % 6);
    for (auto& v : logits) v = dist(rng);
    auto sm = softmax(logits);
    float sum = 0.0f;
    for (float v : sm) {
      CHECK(v > 0.0f);
      sum += v;
    }
    CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0f, 1e-6f));
  }
}

TEST_CASE("channel concat stacks in argument order") {
  Tensor a({1, 2, 4, 4}, 1.0f), b({1, 3, 4, 4}, 2.0f);
  Tensor y = channel_concat({&a, &b});
  CHECK(y.shape() == Shape4{1, 5, 4, 4});
  CHECK(y.at(0, 0, 0, 0) == 1.0f);
  CHECK(y.at(0, 2, 0, 0) == 2.0f);

  Tensor c({1, 1, 3, 4}, 0.0f);
  CHECK_THROWS_AS(channel_concat({&a, &c}), Error);
}

TEST_CASE("primitives are pure: repeated calls give identical bits") {
  Tensor x = refops::random_tensor({2, 4, 9, 9}, 1234);
  Tensor w = refops::random_tensor({6, 4, 3, 3}, 77);
  std::vector<float> bias(6, 0.5f);
  ConvParams p{6, 3, 3, 2, 2, 1, 1, false};
  Tensor y1 = conv2d(x, w, bias, p);
  Tensor y2 = conv2d(x, w, bias, p);
  REQUIRE(y1.size() == y2.size());
  for (std::size_t i = 0; i < y1.size(); ++i) REQUIRE(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("results do not depend on the engine thread count") {
  Tensor x = refops::random_tensor({1, 8, 16, 16}, 808);
  Tensor w = refops::random_tensor({12, 8, 3, 3}, 809);
  std::vector<float> bias(12, 0.1f);
  ConvParams p{12, 3, 3, 1, 1, 1, 1, false};
  set_threads(1);
  Tensor serial = conv2d(x, w, bias, p);
  set_threads(4);
  Tensor threaded = conv2d(x, w, bias, p);
  Tensor wd = refops::random_tensor({8, 1, 3, 3}, 810);
  std::vector<float> bd(8, 0.0f);
  Tensor dw_threaded = depthwise_conv2d(x, wd, bd, {8, 3, 3, 1, 1, 1, 1, true});
  set_threads(1);
  Tensor dw_serial = depthwise_conv2d(x, wd, bd, {8, 3, 3, 1, 1, 1, 1, true});
  for (std::size_t i = 0; i < serial.size(); ++i)
    REQUIRE(serial.data()[i] == threaded.data()[i]);
  for (std::size_t i = 0; i < dw_serial.size(); ++i)
    REQUIRE(dw_serial.data()[i] == dw_threaded.data()[i]);
}

TEST_CASE("non-finite input is rejected at the boundary") {
  Tensor x({1, 1, 2, 2}, 1.0f);
  x.at(0, 0, 1, 1) = std::numeric_limits<float>::quiet_NaN();
  Tensor w({1, 1, 1, 1}, {1.0f});
  CHECK_THROWS_AS(conv2d(x, w, {0.0f}, {1, 1, 1, 1, 1, 0, 0, false}), Error);
  Tensor inf({1, 1, 1, 1}, {std::numeric_limits<float>::infinity()});
  CHECK_THROWS_AS(relu(inf), Error);
}

TEST_CASE("finite outputs from finite inputs across primitives") {
  Tensor x = refops::random_tensor({1, 3, 8, 8}, 5, -10.0f, 10.0f);
  Tensor w = refops::random_tensor({4, 3, 3, 3}, 6);
  Tensor y = conv2d(x, w, {1, 1, 1, 1}, {4, 3, 3, 1, 1, 1, 1, false});
  CHECK(y.all_finite());
  CHECK(pool2d(y, PoolKind::max, {2, 2, 2, 2, 0, 0}).all_finite());
  CHECK(relu(y).all_finite());
}
