#pragma once

#include <stdexcept>
#include <string>

namespace normlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape/extent of a tensor argument is unusable (empty tensor, mismatched
// operands, incompatible convolution geometry).
class InvalidShape : public Error {
 public:
  using Error::Error;
};

// Requested group count does not divide the channel count.
class InvalidGrouping : public Error {
 public:
  using Error::Error;
};

// Elementwise division by a value too close to zero.
class DegenerateDivisor : public Error {
 public:
  using Error::Error;
};

// Batch statistics requested on a batch too small to carry them.
class DegenerateBatch : public Error {
 public:
  using Error::Error;
};

// A normalization group (or a group of recorded channel statistics) has no
// usable spread.
class DegenerateGroup : public Error {
 public:
  using Error::Error;
};

// A weight row collapses to zero norm after centering.
class DegenerateRow : public Error {
 public:
  using Error::Error;
};

class InvalidLabel : public Error {
 public:
  using Error::Error;
};

class CorruptDataset : public Error {
 public:
  using Error::Error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

// A training run produced a non-finite loss. Recorded by the harness, not
// propagated out of it.
class DivergedRun : public Error {
 public:
  using Error::Error;
};

}  // namespace normlab
