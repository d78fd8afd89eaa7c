#pragma once

#include <stdexcept>
#include <string>

namespace milvid {

// Two families of failure, mirroring the CLI exit codes:
//   usage_error  -> bad configuration or invalid data values (exit 1)
//   data_error   -> unreadable, malformed or corrupted inputs (exit 2)
class usage_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class data_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class config_error : public usage_error {
 public:
  using usage_error::usage_error;
};

// Non-finite values, out-of-domain labels.
class validation_error : public usage_error {
 public:
  using usage_error::usage_error;
};

class shape_error : public usage_error {
 public:
  using usage_error::usage_error;
};

class empty_bag_error : public usage_error {
 public:
  using usage_error::usage_error;
};

// Raised when a gradient or objective turns non-finite mid-training.
class training_error : public usage_error {
 public:
  using usage_error::usage_error;
};

class io_error : public data_error {
 public:
  using data_error::data_error;
};

class format_error : public data_error {
 public:
  using data_error::data_error;
};

class corruption_error : public data_error {
 public:
  using data_error::data_error;
};

class checksum_error : public corruption_error {
 public:
  using corruption_error::corruption_error;
};

}  // namespace milvid
