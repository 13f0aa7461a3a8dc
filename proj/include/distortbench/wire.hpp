#pragma once

// Classifier-serving wire protocol. All integers and floats little-endian.
//
//   request:  "DBQ1" | u8 1   | u32 N | u32 C | u32 H | u32 W | N*C*H*W float32
//   response: "DBQ1" | u8 2   | u32 N | u32 K | N*K float32 (row-major)
//   error:    "DBQ1" | u8 255 | u32 len | len bytes of UTF-8

#include <cmath>
#include <cstdint>
#include <iostream>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "distortbench/binary_io.hpp"
#include "distortbench/classifier.hpp"
#include "distortbench/errors.hpp"
#include "distortbench/tensor.hpp"

namespace distortbench::wire {

inline constexpr std::string_view kMagic = "DBQ1";
inline constexpr std::uint8_t kRequest = 1;
inline constexpr std::uint8_t kResponse = 2;
inline constexpr std::uint8_t kError = 255;

/// Magic + type + first u32.
inline constexpr std::size_t kPrefixSize = 9;
/// Frames larger than this are rejected before allocating.
inline constexpr std::uint64_t kMaxPayload = 1ULL << 31;

/// Remote rows whose sum is off by more than this are rejected outright.
inline constexpr double kRejectTolerance = 1e-3;

using Bytes = std::vector<std::uint8_t>;

inline Bytes encode_predict_request(std::span<const ImageTensor> images) {
  if (images.empty()) throw ProtocolError("encode request: empty image list");
  const Shape s = images.front().shape();
  ByteWriter w;
  w.bytes(kMagic);
  w.u8(kRequest);
  w.u32(static_cast<std::uint32_t>(images.size()));
  w.u32(static_cast<std::uint32_t>(s.channels));
  w.u32(static_cast<std::uint32_t>(s.height));
  w.u32(static_cast<std::uint32_t>(s.width));
  for (const auto& img : images) {
    if (!(img.shape() == s)) throw ProtocolError("encode request: mixed image shapes");
    for (double v : img.values()) w.f32(static_cast<float>(v));
  }
  return std::move(w).take();
}

inline Bytes encode_predict_response(std::span<const ProbabilityVector> rows) {
  if (rows.empty()) throw ProtocolError("encode response: no rows");
  const std::size_t k = rows.front().size();
  ByteWriter w;
  w.bytes(kMagic);
  w.u8(kResponse);
  w.u32(static_cast<std::uint32_t>(rows.size()));
  w.u32(static_cast<std::uint32_t>(k));
  for (const auto& r : rows) {
    if (r.size() != k) throw ProtocolError("encode response: ragged rows");
    for (double v : r.values()) w.f32(static_cast<float>(v));
  }
  return std::move(w).take();
}

inline Bytes encode_error(std::string_view message) {
  ByteWriter w;
  w.bytes(kMagic);
  w.u8(kError);
  w.u32(static_cast<std::uint32_t>(message.size()));
  w.bytes(message);
  return std::move(w).take();
}

namespace detail {

inline std::uint8_t read_prefix(ByteReader& r) {
  if (r.bytes(kMagic.size()) != kMagic) throw ProtocolError("bad magic or version");
  const std::uint8_t type = r.u8();
  if (!r.ok()) throw ProtocolError("truncated frame header");
  return type;
}

[[noreturn]] inline void raise_error_frame(ByteReader& r) {
  const std::uint32_t len = r.u32();
  std::string msg = r.bytes(len);
  if (!r.ok()) throw ProtocolError("truncated error frame");
  throw ProtocolError("remote error: " + msg);
}

}  // namespace detail

/// Server side: parses a request frame into images.
inline std::vector<ImageTensor> decode_predict_request(std::span<const std::uint8_t> frame) {
  ByteReader r(frame);
  const std::uint8_t type = detail::read_prefix(r);
  if (type != kRequest) throw ProtocolError("expected request frame, got type " + std::to_string(type));
  const std::uint64_t n = r.u32();
  const Shape s{r.u32(), r.u32(), r.u32()};
  if (!r.ok()) throw ProtocolError("truncated request header");
  if (n == 0) throw ProtocolError("request with zero images");
  if (s.size() == 0) throw ProtocolError("request with empty image shape");
  if (n * s.size() * 4 != r.remaining()) {
    throw ProtocolError("request payload has " + std::to_string(r.remaining()) + " bytes, header declares " +
                        std::to_string(n * s.size() * 4));
  }
  std::vector<ImageTensor> images;
  images.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::vector<double> v(s.size());
    for (double& x : v) {
      x = r.f32();
      if (!std::isfinite(x) || x < 0.0 || x > 1.0) throw ProtocolError("request intensity outside [0,1]");
    }
    images.emplace_back(s, std::move(v));
  }
  return images;
}

/// Client side: parses a response frame. Error frames raise ProtocolError with
/// the remote message. Rows off by more than 1e-3 from unit sum are rejected;
/// smaller deviations beyond 1e-5 are renormalized with a warning.
inline std::vector<ProbabilityVector> decode_predict_response(std::span<const std::uint8_t> frame,
                                                              std::size_t expected_rows = 0) {
  ByteReader r(frame);
  const std::uint8_t type = detail::read_prefix(r);
  if (type == kError) detail::raise_error_frame(r);
  if (type != kResponse) throw ProtocolError("expected response frame, got type " + std::to_string(type));
  const std::uint64_t n = r.u32();
  const std::uint64_t k = r.u32();
  if (!r.ok()) throw ProtocolError("truncated response header");
  if (n == 0 || k == 0) throw ProtocolError("response with zero rows or classes");
  if (n * k * 4 != r.remaining()) {
    throw ProtocolError("response payload has " + std::to_string(r.remaining()) + " bytes, header declares " +
                        std::to_string(n * k * 4));
  }
  if (expected_rows != 0 && n != expected_rows) {
    throw ProtocolError("response has " + std::to_string(n) + " rows, expected " + std::to_string(expected_rows));
  }
  std::vector<ProbabilityVector> rows;
  rows.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::vector<double> p(k);
    double sum = 0.0;
    for (double& v : p) {
      v = r.f32();
      if (!std::isfinite(v) || v < 0.0) throw ProtocolError("response row has negative or non-finite entry");
      sum += v;
    }
    const double err = std::abs(sum - 1.0);
    if (err > kRejectTolerance) {
      throw ProtocolError("response row " + std::to_string(i) + " sums to " + std::to_string(sum));
    }
    if (err > ProbabilityVector::kSumTolerance) {
      std::clog << "warning: renormalizing remote probability row " << i << " (sum " << sum << ")\n";
      for (double& v : p) v /= sum;
    }
    rows.emplace_back(std::move(p));
  }
  return rows;
}

/// Total frame size given its first kPrefixSize bytes plus, for requests and
/// responses, the rest of the fixed header. Returns the number of header bytes
/// still needed when `header` is too short to decide.
struct FrameSize {
  std::size_t header = 0;
  std::uint64_t total = 0;
};

inline FrameSize frame_size(std::span<const std::uint8_t> header) {
  ByteReader r(header);
  const std::uint8_t type = detail::read_prefix(r);
  const std::uint64_t first = r.u32();
  switch (type) {
    case kRequest: {
      if (header.size() < kPrefixSize + 12) return {kPrefixSize + 12, 0};
      const std::uint64_t c = r.u32(), h = r.u32(), w = r.u32();
      const unsigned __int128 payload = static_cast<unsigned __int128>(first) * c * h * w * 4;
      if (payload > kMaxPayload) throw ProtocolError("request frame too large");
      return {kPrefixSize + 12, kPrefixSize + 12 + static_cast<std::uint64_t>(payload)};
    }
    case kResponse: {
      if (header.size() < kPrefixSize + 4) return {kPrefixSize + 4, 0};
      const std::uint64_t k = r.u32();
      const unsigned __int128 payload = static_cast<unsigned __int128>(first) * k * 4;
      if (payload > kMaxPayload) throw ProtocolError("response frame too large");
      return {kPrefixSize + 4, kPrefixSize + 4 + static_cast<std::uint64_t>(payload)};
    }
    case kError:
      if (first > kMaxPayload) throw ProtocolError("error frame too large");
      return {kPrefixSize, kPrefixSize + first};
    default:
      throw ProtocolError("unknown message type " + std::to_string(type));
  }
}

}  // namespace distortbench::wire
