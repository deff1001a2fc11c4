#pragma once

#include <stdexcept>
#include <string>

namespace boxrl {

// Error taxonomy maps 1:1 onto CLI exit codes:
//   ConfigError -> 2, DataError -> 3, ProviderError -> 4, NumericError -> 5.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : DataError {
  using DataError::DataError;
};

struct UnknownSampleError : DataError {
  explicit UnknownSampleError(const std::string& id)
      : DataError("unknown sample id: " + id), sample_id(id) {}
  std::string sample_id;
};

struct GenerationExhausted : DataError {
  using DataError::DataError;
};

// External similarity scorer failures. Never silently mapped to reward 0.
struct ProviderError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TimeoutError : ProviderError {
  using ProviderError::ProviderError;
};

struct ProtocolError : ProviderError {
  using ProviderError::ProviderError;
};

struct RemoteError : ProviderError {
  using ProviderError::ProviderError;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace boxrl
