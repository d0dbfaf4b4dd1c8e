#include <catch2/catch_amalgamated.hpp>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <random>
#include <thread>

#include "dvstn/events.hpp"
#include "dvstn/pipeline.hpp"
#include "dvstn/tcp_sink.hpp"
#include "dvstn/zoo.hpp"
#include "reference_ops.hpp"

using namespace dvstn;

namespace {

EventFrame tagged_frame(int tag, int w = 32, int h = 32, std::uint64_t t = 0) {
  EventFrame f(w, h, t);
  f.pixels[0] = std::uint8_t(tag);
  return f;
}

std::vector<EventFrame> constant_frames(int count, int w = 32, int h = 32, std::uint8_t v = 0) {
  std::vector<EventFrame> frames;
  for (int i = 0; i < count; ++i) {
    EventFrame f(w, h, std::uint64_t(i) * kDefaultIntervalUs);
    std::fill(f.pixels.begin(), f.pixels.end(), v);
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace

TEST_CASE("event accumulation basics") {
  // empty interval -> all-zero frame
  std::vector<EventRecord> one = {{70000, 3, 5, 1}};
  auto r = accumulate_events(one, 33300, 16, 16);
  REQUIRE(r.frames.size() == 3);  // 70ms falls in frame 2; frames 0,1 empty... frame idx 70/33.3=2
  for (auto v : r.frames[0].pixels) CHECK(v == 0);
  int nonzero = 0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      if (r.frames[2].at(x, y)) {
        ++nonzero;
        CHECK(x == 3);
        CHECK(y == 5);
      }
  CHECK(nonzero == 1);
}

TEST_CASE("events at 10ms and 40ms with 33.3ms intervals land in frames 0 and 1") {
  std::vector<EventRecord> ev = {{10000, 1, 1, 0}, {40000, 2, 2, 1}};
  auto r = accumulate_events(ev, 33300, 8, 8);
  REQUIRE(r.frames.size() == 2);
  CHECK(r.frames[0].at(1, 1) == 255);
  CHECK(r.frames[0].at(2, 2) == 0);
  CHECK(r.frames[1].at(2, 2) == 255);
}

TEST_CASE("out-of-range events are dropped and counted") {
  std::vector<EventRecord> ev = {{100, 7, 7, 0}, {200, 200, 3, 0}, {300, 3, 200, 0}};
  auto r = accumulate_events(ev, 33300, 8, 8);
  CHECK(r.dropped == 2);
  CHECK(r.frames[0].at(7, 7) == 255);
}

TEST_CASE("non-monotone event timestamps are rejected") {
  std::vector<EventRecord> ev = {{200, 1, 1, 0}, {100, 1, 1, 0}};
  CHECK_THROWS_AS(accumulate_events(ev, 33300, 8, 8), Error);
}

TEST_CASE("resize_area block means") {
  Image img(2, 2);
  img.at(0, 0) = 1;
  img.at(1, 0) = 2;
  img.at(0, 1) = 3;
  img.at(1, 1) = 4;
  auto r = resize_area(img, 1, 1);
  CHECK_FALSE(r.bilinear_fallback);
  CHECK_THAT(r.image.at(0, 0), Catch::Matchers::WithinAbs(2.5f, 1e-6f));

  Image blocks(4, 4);
  float vals[2][2] = {{5, 7}, {11, 13}};
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) blocks.at(x, y) = vals[y / 2][x / 2];
  auto r2 = resize_area(blocks, 2, 2);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x)
      CHECK_THAT(r2.image.at(x, y), Catch::Matchers::WithinAbs(vals[y][x], 1e-6f));
}

TEST_CASE("resize_area keeps constant images constant") {
  Image img(17, 13, 3.25f);
  auto r = resize_area(img, 5, 4);
  for (float v : r.image.px) CHECK_THAT(v, Catch::Matchers::WithinAbs(3.25f, 1e-5f));
}

TEST_CASE("resize_area preserves the global mean for integral factors") {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<float> dist(0.0f, 255.0f);
  auto mean_of = [](const Image& im) {
    double acc = 0.0;
    for (float v : im.px) acc += v;
    return acc / double(im.px.size());
  };
  Image big(640, 480);
  for (auto& v : big.px) v = dist(rng);
  auto down = resize_area(big, 32, 24);
  CHECK_THAT(mean_of(down.image),
             Catch::Matchers::WithinRel(mean_of(big), 1e-6));

  Image mid(64, 64);
  for (auto& v : mid.px) v = dist(rng);
  auto half = resize_area(mid, 32, 32);
  CHECK_THAT(mean_of(half.image), Catch::Matchers::WithinRel(mean_of(mid), 1e-6));
}

TEST_CASE("upscale requests fall back to bilinear and say so") {
  Image img(4, 4, 1.0f);
  auto r = resize_area(img, 8, 8);
  CHECK(r.bilinear_fallback);
  CHECK(r.image.width == 8);
}

TEST_CASE("resize_bilinear identity and midpoint interpolation") {
  Image img(2, 1);
  img.at(0, 0) = 0.0f;
  img.at(1, 0) = 2.0f;
  Image same = resize_bilinear(img, 2, 1);
  CHECK(same.at(1, 0) == 2.0f);

  Image up = resize_bilinear(img, 4, 1);
  // output pixels 1 and 2 sit at source offsets 0.25 and 0.75
  CHECK_THAT(up.at(1, 0), Catch::Matchers::WithinAbs(0.5f, 1e-6f));
  CHECK_THAT(up.at(2, 0), Catch::Matchers::WithinAbs(1.5f, 1e-6f));
  // the interior midpoint between those centers is 1.0 by symmetry
  CHECK_THAT((up.at(1, 0) + up.at(2, 0)) / 2.0f, Catch::Matchers::WithinAbs(1.0f, 1e-6f));

  Image c(5, 7, 9.0f);
  Image cr = resize_bilinear(c, 3, 11);
  for (float v : cr.px) CHECK_THAT(v, Catch::Matchers::WithinAbs(9.0f, 1e-5f));
}

TEST_CASE("segment extraction picks the front/middle/end decades") {
  FrameWindow window;
  for (int i = 0; i < 50; ++i)
    window.push(image_from_frame(tagged_frame(i + 1)), std::uint64_t(i));
  auto stacks = extract_segments(window, 32);
  REQUIRE(stacks.has_value());
  const int starts[3] = {0, 20, 40};
  for (int s = 0; s < 3; ++s)
    for (int i = 0; i < 10; ++i) {
      float tag = (*stacks)[s].tensor.at(0, i, 0, 0) * 255.0f;
      CHECK_THAT(tag, Catch::Matchers::WithinAbs(float(starts[s] + i + 1), 1e-3f));
    }
  CHECK((*stacks)[0].role == SegmentRole::front);
  CHECK((*stacks)[2].role == SegmentRole::end);
}

TEST_CASE("a 49-frame window is not ready") {
  FrameWindow window;
  for (int i = 0; i < 49; ++i) window.push(Image(32, 32), std::uint64_t(i));
  CHECK_FALSE(extract_segments(window, 32).has_value());
}

TEST_CASE("an all-zero window produces all-zero stacks") {
  FrameWindow window;
  for (int i = 0; i < 50; ++i) window.push(Image(32, 32), std::uint64_t(i));
  auto stacks = extract_segments(window, 32);
  REQUIRE(stacks.has_value());
  for (const auto& s : *stacks)
    for (std::size_t i = 0; i < s.tensor.size(); ++i) CHECK(s.tensor.data()[i] == 0.0f);
}

TEST_CASE("segment extraction depends only on the last 50 frames") {
  auto run = [](int prefix_tag) {
    FrameWindow window;
    for (int i = 0; i < 50; ++i)
      window.push(image_from_frame(tagged_frame(prefix_tag)), std::uint64_t(i));
    for (int i = 0; i < 50; ++i)
      window.push(image_from_frame(tagged_frame(i + 100)), std::uint64_t(50 + i));
    return extract_segments(window, 32);
  };
  auto a = run(1), b = run(200);
  REQUIRE(a.has_value());
  REQUIRE(b.has_value());
  for (int s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < (*a)[s].tensor.size(); ++i)
      REQUIRE((*a)[s].tensor.data()[i] == (*b)[s].tensor.data()[i]);
}

TEST_CASE("consensus of identical pairs equals their softmax") {
  std::array<std::array<float, 2>, 3> logits = {{{1.0f, 3.0f}, {1.0f, 3.0f}, {1.0f, 3.0f}}};
  Consensus c = consensus(logits, 0.5f);
  float expect = softmax({1.0f, 3.0f})[1];
  CHECK_THAT(c.fall_probability, Catch::Matchers::WithinAbs(expect, 1e-6f));
  CHECK(c.fall);
}

TEST_CASE("consensus hand arithmetic gives 0.5") {
  std::array<std::array<float, 2>, 3> logits = {{{0, 0}, {0, 2}, {0, -2}}};
  // fall logits average to 0 against 0
  Consensus c = consensus(logits, 0.5f);
  CHECK_THAT(c.fall_probability, Catch::Matchers::WithinAbs(0.5f, 1e-6f));
}

TEST_CASE("strongly positive fall logits exceed 0.99") {
  std::array<std::array<float, 2>, 3> logits = {{{0, 10}, {0, 10}, {0, 10}}};
  Consensus c = consensus(logits, 0.5f);
  CHECK(c.fall_probability > 0.99f);
}

TEST_CASE("consensus is permutation invariant") {
  std::array<std::array<float, 2>, 3> logits = {{{0.3f, 1.1f}, {-0.7f, 0.2f}, {2.0f, -1.0f}}};
  Consensus base = consensus(logits, 0.5f);
  std::array<int, 3> perm = {0, 1, 2};
  std::sort(perm.begin(), perm.end());
  do {
    std::array<std::array<float, 2>, 3> shuffled = {logits[perm[0]], logits[perm[1]],
                                                    logits[perm[2]]};
    Consensus c = consensus(shuffled, 0.5f);
    CHECK_THAT(c.fall_probability, Catch::Matchers::WithinAbs(base.fall_probability, 1e-6f));
  } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST_CASE("classify_window with zero weights returns probability one half") {
  ModelSpec m8 = canonical_model("m8");
  WeightStore store = refops::random_weights(m8, 1);
  for (auto& [id, lw] : store.layers) {
    std::fill(lw.weights.begin(), lw.weights.end(), 0.0f);
    std::fill(lw.bias.begin(), lw.bias.end(), 0.0f);
  }
  FrameWindow window;
  for (int i = 0; i < 50; ++i) window.push(Image(32, 32, float(i)), std::uint64_t(i) * 1000);
  Detection det = classify_window(window, m8, store);
  CHECK_THAT(det.fall_probability, Catch::Matchers::WithinAbs(0.5f, 1e-6f));
  CHECK_FALSE(det.fall);  // a tie at the threshold stays non-fall
}

TEST_CASE("classification is deterministic and stamps the newest frame") {
  ModelSpec m8 = canonical_model("m8");
  WeightStore store = refops::random_weights(m8, 77);
  FrameWindow window;
  std::mt19937_64 rng(9);
  for (int i = 0; i < 50; ++i) {
    Image img(32, 32);
    for (auto& v : img.px) v = float(rng() % 256);
    window.push(std::move(img), 1000000ull + i);
  }
  Detection a = classify_window(window, m8, store);
  Detection b = classify_window(window, m8, store);
  CHECK(a.t_us == 1000000ull + 49);
  CHECK(a.fall_probability == b.fall_probability);
  CHECK(a.segment_logits == b.segment_logits);
}

TEST_CASE("the label is invariant under a constant logit shift") {
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<float> dist(-3.0f, 3.0f);
  for (int trial = 0; trial < 20; ++trial) {
    std::array<std::array<float, 2>, 3> logits;
    for (auto& p : logits) p = {dist(rng), dist(rng)};
    Consensus base = consensus(logits, 0.5f);
    float shift = dist(rng) * 10.0f;
    auto shifted = logits;
    for (auto& p : shifted) {
      p[0] += shift;
      p[1] += shift;
    }
    Consensus moved = consensus(shifted, 0.5f);
    CHECK(base.fall == moved.fall);
  }
}

TEST_CASE("stream arithmetic: 49 frames give zero detections, 52 give three") {
  ModelSpec m8 = canonical_model("m8");
  WeightStore store = refops::random_weights(m8, 3);
  {
    StreamDetector det(m8, store);
    int count = 0;
    for (const auto& f : constant_frames(49))
      if (det.push(f)) ++count;
    CHECK(count == 0);
  }
  {
    StreamDetector det(m8, store);
    int count = 0;
    for (const auto& f : constant_frames(52))
      if (det.push(f)) ++count;
    CHECK(count == 3);
  }
}

TEST_CASE("detections follow the throughput formula for any stride") {
  ModelSpec m8 = canonical_model("m8");
  WeightStore store = refops::random_weights(m8, 3);
  for (int frames : {10, 50, 61, 100})
    for (int k : {1, 2, 5}) {
      StreamDetector det(m8, store, {.stride = k});
      long long count = 0;
      for (const auto& f : constant_frames(frames))
        if (det.push(f)) ++count;
      long long expect = std::max(0LL, (static_cast<long long>(frames) - 50) / k + 1);
      CHECK(count == expect);
    }
}

TEST_CASE("constant non-fall streams never alert") {
  // zero weights give probability 0.5 everywhere: every detection is
  // non-fall, so no rising edge ever fires
  ModelSpec m8 = canonical_model("m8");
  WeightStore store = refops::random_weights(m8, 3);
  for (auto& [id, lw] : store.layers) {
    std::fill(lw.weights.begin(), lw.weights.end(), 0.0f);
    std::fill(lw.bias.begin(), lw.bias.end(), 0.0f);
  }
  StreamDetector det(m8, store);
  int detections = 0;
  for (const auto& f : constant_frames(80))
    if (det.push(f)) ++detections;
  CHECK(detections == 31);
  CHECK(det.alerts().empty());
}

TEST_CASE("alerts are edge-triggered with a refractory period") {
  // threshold 0 forces every detection to be labeled fall; only the first
  // transition alerts, and the refractory period suppresses re-alerts.
  ModelSpec m8 = canonical_model("m8");
  WeightStore store = refops::random_weights(m8, 3);
  StreamDetector det(m8, store, {.threshold = 0.0f, .refractory_us = 2000000});
  int detections = 0;
  for (const auto& f : constant_frames(60))
    if (det.push(f)) ++detections;
  CHECK(detections == 11);
  CHECK(det.alerts().size() == 1);  // one rising edge, no repeats while high
}

TEST_CASE("threaded pipeline drains a queue-sized burst without loss") {
  ModelSpec m8 = canonical_model("m8");
  WeightStore store = refops::random_weights(m8, 3);
  std::atomic<int> seen{0};
  {
    // 50 frames fit the depth-50 queue even if the consumer never ran
    StreamPipeline pipe(m8, store, {}, [&](const Detection&) { ++seen; });
    for (const auto& f : constant_frames(50)) pipe.push(f);
    pipe.close();
    CHECK(pipe.dropped_frames() == 0);
  }
  CHECK(seen.load() == 1);
}

TEST_CASE("bounded queue drops oldest under overload") {
  // no consumer wait: push 200 frames into a depth-8 queue with a consumer
  // that is deliberately slow by classifying a full model each time
  ModelSpec m8 = canonical_model("m8");
  WeightStore store = refops::random_weights(m8, 3);
  std::atomic<int> seen{0};
  StreamPipeline pipe(m8, store, {}, [&](const Detection&) { ++seen; }, {}, /*queue_depth=*/8);
  for (const auto& f : constant_frames(400)) pipe.push(f);
  pipe.close();
  CHECK(pipe.dropped_frames() > 0);
}

TEST_CASE("detection lines carry timestamp, probability, label, and logits") {
  Detection d;
  d.t_us = 1666667;  // 1.666667 s into 1970
  d.fall_probability = 0.1234f;
  d.fall = false;
  d.segment_logits = {{{0.5f, -0.25f}, {1.0f, 2.0f}, {-3.5f, 0.0f}}};
  std::string line = detection_line(d);
  CHECK(line == "1970-01-01T00:00:01.666667Z 0.1234 non_fall 0.5000,-0.2500 1.0000,2.0000 "
                "-3.5000,0.0000");
}

TEST_CASE("tcp sink delivers lines to a local listener") {
  int server = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(server >= 0);
  int yes = 1;
  setsockopt(server, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  REQUIRE(::bind(server, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  socklen_t len = sizeof addr;
  getsockname(server, reinterpret_cast<sockaddr*>(&addr), &len);
  REQUIRE(::listen(server, 1) == 0);

  std::string received;
  std::thread listener([&] {
    int conn = ::accept(server, nullptr, nullptr);
    char buf[256];
    ssize_t n;
    while ((n = ::read(conn, buf, sizeof buf)) > 0) received.append(buf, std::size_t(n));
    ::close(conn);
  });

  {
    TcpSink sink("127.0.0.1", ntohs(addr.sin_port));
    REQUIRE(sink.connected());
    sink.send_line("hello");
    sink.send_line("world");
  }
  listener.join();
  ::close(server);
  CHECK(received == "hello\nworld\n");
}

TEST_CASE("unreachable sink degrades without throwing") {
  TcpSink sink("127.0.0.1", 9);  // discard port, almost surely closed
  CHECK_FALSE(sink.connected());
  CHECK_NOTHROW(sink.send_line("dropped"));
}
