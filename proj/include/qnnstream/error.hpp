#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace qnn {

// Base of everything the library throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

// A value does not fit the signed width of the stream carrying it.
struct OverflowError : Error {
  using Error::Error;
};

// gamma * inv_std == 0 for some channel.
struct DegenerateChannelError : Error {
  using Error::Error;
};

struct InvalidQuantizerError : Error {
  using Error::Error;
};

// A sliding window asked for an element the line buffer already dropped.
struct EvictedElementFault : Error {
  EvictedElementFault(std::size_t wanted, std::size_t oldest)
      : Error("line buffer: element " + std::to_string(wanted) +
              " evicted (oldest held " + std::to_string(oldest) + ")"),
        wanted_index(wanted),
        oldest_index(oldest) {}
  std::size_t wanted_index;
  std::size_t oldest_index;
};

struct ParseError : Error {
  ParseError(std::size_t line_no, const std::string& what)
      : Error("line " + std::to_string(line_no) + ": " + what), line(line_no) {}
  std::size_t line;
};

struct ParamError : Error {
  using Error::Error;
};

struct FifoError : Error {
  using Error::Error;
};

// No stage can fire, input is exhausted and the output is incomplete.
struct DeadlockError : Error {
  DeadlockError(const std::string& what, std::vector<std::string> blocked)
      : Error(what), blocked_stages(std::move(blocked)) {}
  std::vector<std::string> blocked_stages;
};

struct PartitionError : Error {
  using Error::Error;
};

}  // namespace qnn
