#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "qnnstream/error.hpp"

namespace qnn {

struct Shape {
  int h = 0;
  int w = 0;
  int c = 0;

  std::size_t pixels() const { return static_cast<std::size_t>(h) * w; }
  std::size_t elements() const { return pixels() * c; }

  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.h) + "x" + std::to_string(s.w) + "x" +
         std::to_string(s.c);
}

/// What the values of a stream mean. Codes are unsigned activation levels
/// (raw 8-bit images are codes with bits == 8); accumulators are signed
/// pre-activation sums.
enum class ElementKind { Code, Accum };

struct StreamType {
  ElementKind kind = ElementKind::Code;
  int bits = 2;

  friend bool operator==(const StreamType&, const StreamType&) = default;
};

/// Depth-first element stream: channel fastest, then along the scan line,
/// then across lines.
struct PixelStream {
  Shape shape;
  StreamType type;
  std::vector<std::int32_t> data;

  PixelStream() = default;
  PixelStream(Shape s, StreamType t)
      : shape(s), type(t), data(s.elements(), 0) {}
  PixelStream(Shape s, StreamType t, std::vector<std::int32_t> values)
      : shape(s), type(t), data(std::move(values)) {
    if (data.size() != shape.elements())
      throw ShapeError("stream of shape " + to_string(shape) + " needs " +
                       std::to_string(shape.elements()) + " elements, got " +
                       std::to_string(data.size()));
  }

  std::size_t index(int y, int x, int ch) const {
    return (static_cast<std::size_t>(y) * shape.w + x) * shape.c + ch;
  }
  std::int32_t at(int y, int x, int ch) const { return data[index(y, x, ch)]; }
  std::int32_t& at(int y, int x, int ch) { return data[index(y, x, ch)]; }

  friend bool operator==(const PixelStream&, const PixelStream&) = default;
};

/// Grows both spatial dimensions by 2 * pad, filling the border with
/// `pad_value`. For 1-bit streams code 0 stands for -1.
inline PixelStream pad_stream(const PixelStream& in, int pad,
                              std::int32_t pad_value = 0) {
  if (pad < 0) throw ShapeError("pad_stream: negative padding");
  if (pad == 0) return in;
  Shape s{in.shape.h + 2 * pad, in.shape.w + 2 * pad, in.shape.c};
  PixelStream out(s, in.type);
  std::fill(out.data.begin(), out.data.end(), pad_value);
  for (int y = 0; y < in.shape.h; ++y)
    for (int x = 0; x < in.shape.w; ++x)
      for (int ch = 0; ch < in.shape.c; ++ch)
        out.at(y + pad, x + pad, ch) = in.at(y, x, ch);
  return out;
}

/// Output extent of a sliding window: floor((in + 2P - K) / S) + 1.
inline int window_out(int in, int k, int s, int p) {
  if (k <= 0 || s <= 0 || p < 0) throw ShapeError("invalid window geometry");
  const int span = in + 2 * p - k;
  if (span < 0)
    throw ShapeError("window " + std::to_string(k) + " larger than padded input " +
                     std::to_string(in + 2 * p));
  return span / s + 1;
}

/// Depth-first line buffer size for a K x K window over a scan line of
/// `line` pixels with `channels` channels: I*L*(K-1) + I*K.
inline std::size_t line_buffer_capacity(int channels, int line, int k) {
  return static_cast<std::size_t>(channels) * line * (k - 1) +
         static_cast<std::size_t>(channels) * k;
}

/// Buffer size when scanning width-first instead:
/// H*W*(I-1) + H*(K-1) + K.
inline std::size_t width_first_buffer_capacity(int h, int w, int channels, int k) {
  return static_cast<std::size_t>(h) * w * (channels - 1) +
         static_cast<std::size_t>(h) * (k - 1) + k;
}

/// Skip-path delay buffer: I*(L*(K-1) + K) elements.
inline std::size_t skip_buffer_capacity(int channels, int line, int k) {
  return static_cast<std::size_t>(channels) *
         (static_cast<std::size_t>(line) * (k - 1) + k);
}

/// Sliding window over the most recent `capacity` elements of a stream,
/// addressed by absolute stream index.
template <typename T>
class LineBuffer {
 public:
  explicit LineBuffer(std::size_t capacity) : ring_(capacity) {
    if (capacity == 0) throw ShapeError("line buffer capacity must be positive");
  }

  std::size_t capacity() const { return ring_.size(); }
  std::size_t count() const { return count_; }

  void push(T v) { ring_[count_++ % ring_.size()] = v; }

  const T& at(std::size_t stream_index) const {
    if (stream_index >= count_)
      throw Error("line buffer: element " + std::to_string(stream_index) +
                  " not received yet");
    const std::size_t oldest = count_ > ring_.size() ? count_ - ring_.size() : 0;
    if (stream_index < oldest) throw EvictedElementFault(stream_index, oldest);
    return ring_[stream_index % ring_.size()];
  }

 private:
  std::vector<T> ring_;
  std::size_t count_ = 0;
};

}  // namespace qnn
