#include <gtest/gtest.h>

#include <cmath>

#include "distortbench/remote.hpp"
#include "distortbench/rng.hpp"
#include "distortbench/wire.hpp"

using namespace distortbench;

namespace {

ImageTensor random_image(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(s.size());
  for (double& x : v) x = rng.uniform();
  return ImageTensor(s, std::move(v));
}

std::shared_ptr<ToyLinearModel> toy(Shape s, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(k * s.size()), b(k);
  for (double& x : w) x = rng.normal();
  for (double& x : b) x = rng.normal();
  return std::make_shared<ToyLinearModel>(k, s.size(), w, b, s, "toy");
}

wire::Bytes response_with_row(std::vector<float> row) {
  ByteWriter w;
  w.bytes(wire::kMagic);
  w.u8(wire::kResponse);
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(row.size()));
  for (float v : row) w.f32(v);
  return std::move(w).take();
}

}  // namespace

TEST(Wire, RequestRoundTripsAtFloat32) {
  const auto img = random_image({3, 4, 4}, 1);
  const std::vector<ImageTensor> batch{img};
  const auto frame = wire::encode_predict_request(batch);
  EXPECT_EQ(frame.size(), 4u + 1u + 16u + 48u * 4u);
  const auto back = wire::decode_predict_request(frame);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0], quantize_float32(img));
  EXPECT_EQ(wire::encode_predict_request(back), frame);
}

TEST(Wire, ResponseRoundTripsAtFloat32) {
  const std::vector<ProbabilityVector> rows{ProbabilityVector({0.1, 0.2, 0.7}), ProbabilityVector({1.0, 0.0, 0.0})};
  const auto back = wire::decode_predict_response(wire::encode_predict_response(rows), 2);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], quantize_probabilities(rows[0]));
  EXPECT_EQ(back[1], rows[1]);
}

TEST(Wire, EmptyBatchIsProtocolErrorOnEncode) {
  EXPECT_THROW(wire::encode_predict_request({}), ProtocolError);
}

TEST(Wire, DeclaredCountLargerThanPayloadFailsDecode) {
  const auto img = ImageTensor::filled({1, 2, 2}, 0.5);
  const std::vector<ImageTensor> batch{img};
  auto frame = wire::encode_predict_request(batch);
  frame[5] = 2;  // batch count low byte
  EXPECT_THROW(wire::decode_predict_request(frame), ProtocolError);

  const std::vector<ProbabilityVector> rows{ProbabilityVector({0.5, 0.5})};
  auto resp = wire::encode_predict_response(rows);
  resp[5] = 2;
  EXPECT_THROW(wire::decode_predict_response(resp), ProtocolError);
}

TEST(Wire, BadMagicTruncationAndRowCountMismatch) {
  const std::vector<ImageTensor> batch{ImageTensor::filled({1, 2, 2}, 0.5)};
  auto frame = wire::encode_predict_request(batch);
  auto bad = frame;
  bad[3] = '2';
  EXPECT_THROW(wire::decode_predict_request(bad), ProtocolError);
  frame.pop_back();
  EXPECT_THROW(wire::decode_predict_request(frame), ProtocolError);
  const std::vector<ProbabilityVector> rows{ProbabilityVector({0.5, 0.5})};
  EXPECT_THROW(wire::decode_predict_response(wire::encode_predict_response(rows), 3), ProtocolError);
}

TEST(Wire, ErrorFrameCarriesMessage) {
  try {
    wire::decode_predict_response(wire::encode_error("model exploded"));
    FAIL() << "expected ProtocolError";
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("model exploded"), std::string::npos);
  }
}

TEST(Wire, NormalizationSlackIsRenormalizedButLargeErrorsRejected) {
  const auto ok = wire::decode_predict_response(response_with_row({0.5f, 0.5001f}));
  EXPECT_NEAR(ok[0][0] + ok[0][1], 1.0, 1e-12);
  EXPECT_THROW(wire::decode_predict_response(response_with_row({0.5f, 0.51f})), ProtocolError);
  EXPECT_THROW(wire::decode_predict_response(response_with_row({1.5f, -0.5f})), ProtocolError);
}

TEST(Wire, FrameSizeFromHeader) {
  const std::vector<ImageTensor> batch{ImageTensor::filled({3, 4, 4}, 0.5), ImageTensor::filled({3, 4, 4}, 0.5)};
  const auto frame = wire::encode_predict_request(batch);
  const auto partial = wire::frame_size(std::span(frame).first(wire::kPrefixSize));
  EXPECT_EQ(partial.total, 0u);
  EXPECT_EQ(partial.header, wire::kPrefixSize + 12);
  EXPECT_EQ(wire::frame_size(std::span(frame).first(partial.header)).total, frame.size());
  auto huge = frame;
  for (int i = 5; i < 21; ++i) huge[std::size_t(i)] = 0xff;
  EXPECT_THROW(wire::frame_size(huge), ProtocolError);
}

TEST(Endpoint, ParsesHostPort) {
  const auto e = Endpoint::parse("localhost:8080");
  EXPECT_EQ(e.host, "localhost");
  EXPECT_EQ(e.port, 8080);
  EXPECT_THROW(Endpoint::parse("nohost"), UsageError);
  EXPECT_THROW(Endpoint::parse("h:0"), UsageError);
  EXPECT_THROW(Endpoint::parse("h:99999"), UsageError);
}

TEST(Loopback, RemoteMatchesInProcessBitExactly) {
  const Shape s{3, 8, 8};
  const auto model = toy(s, 5, 2);
  ClassifierServer server(model);
  const ClassifierHandle local(model, 16);
  const ClassifierHandle remote(std::make_shared<RemoteClassifier>(server.endpoint()), 16);
  std::vector<ImageTensor> batch;
  for (std::uint64_t i = 0; i < 40; ++i) batch.push_back(random_image(s, 10 + i));
  const auto a = local.predict(batch);
  const auto b = remote.predict(batch);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]) << "row " << i;
  EXPECT_EQ(local.queries(), remote.queries());
  EXPECT_EQ(server.frames_served(), 3u);
  EXPECT_EQ(remote.num_classes(), 5u);
}

TEST(Loopback, SameRequestTwiceGivesSameResponse) {
  const Shape s{1, 4, 4};
  ClassifierServer server(toy(s, 3, 3));
  const std::vector<ImageTensor> gray{ImageTensor::filled(s, 0.5), ImageTensor::filled(s, 0.5)};
  const auto frame = wire::encode_predict_request(gray);
  EXPECT_EQ(server.handle(frame), server.handle(frame));
}

TEST(Loopback, MalformedFrameGetsErrorFrameAndConnectionSurvives) {
  const Shape s{1, 4, 4};
  ClassifierServer server(toy(s, 3, 4));
  auto sock = Socket::connect(server.endpoint());
  const std::vector<ImageTensor> wrong{ImageTensor::filled({1, 2, 2}, 0.5)};
  sock.send_all(wire::encode_predict_request(wrong));
  EXPECT_THROW(wire::decode_predict_response(sock.recv_frame()), ProtocolError);
  const std::vector<ImageTensor> right{ImageTensor::filled(s, 0.5)};
  sock.send_all(wire::encode_predict_request(right));
  EXPECT_EQ(wire::decode_predict_response(sock.recv_frame(), 1).size(), 1u);
}

TEST(Loopback, OversizedBatchIsRejectedByServer) {
  const Shape s{1, 2, 2};
  ClassifierServer server(toy(s, 2, 5), 0, "127.0.0.1", 4);
  const std::vector<ImageTensor> batch(5, ImageTensor::filled(s, 0.5));
  EXPECT_THROW(wire::decode_predict_response(server.handle(wire::encode_predict_request(batch))), ProtocolError);
}

TEST(Loopback, UnreachableServerIsTransportErrorAfterRetries) {
  Endpoint dead;
  {
    ClassifierServer server(toy({1, 2, 2}, 2, 6));
    dead = server.endpoint();
  }
  const ClassifierHandle h(std::make_shared<RemoteClassifier>(dead, 2, 3));
  EXPECT_THROW(h.predict_one(ImageTensor::filled({1, 2, 2}, 0.5)), TransportError);
}
