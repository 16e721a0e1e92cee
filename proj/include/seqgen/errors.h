#pragma once

#include <stdexcept>
#include <string>

namespace seqgen {

// Operand extents do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An index (row, token id, beam source) is out of its valid range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// A stateful object (cache set, beam state) was used out of sequence.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Reading or writing a file failed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace seqgen
