#ifndef GEOCAPS_ERROR_HPP_
#define GEOCAPS_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace geocaps {

// Exit-code contract used by the CLI: 0 success, 2 config, 3 data, 4 numerical.
enum class ErrorCode : int {
  generic = 1,
  config = 2,
  data = 3,
  numeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string category, const std::string& what)
      : std::runtime_error(what), code_(code), category_(std::move(category)) {}

  ErrorCode code() const { return code_; }
  const std::string& category() const { return category_; }

 private:
  ErrorCode code_;
  std::string category_;
};

// Shape or rank mismatch between operands.
struct DimensionError : Error {
  explicit DimensionError(const std::string& what)
      : Error(ErrorCode::config, "dimension", what) {}
};

// Violated operation precondition (non-scalar loss, iterations < 1, ...).
struct ContractError : Error {
  explicit ContractError(const std::string& what)
      : Error(ErrorCode::config, "contract", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what)
      : Error(ErrorCode::config, "config", what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what)
      : Error(ErrorCode::data, "data", what) {}
};

// NaN/Inf encountered where finite values are required; aborts training.
struct NumericError : Error {
  explicit NumericError(const std::string& what)
      : Error(ErrorCode::numeric, "numeric", what) {}
};

struct CheckpointError : Error {
  explicit CheckpointError(const std::string& what)
      : Error(ErrorCode::data, "checkpoint", what) {}
};

}  // namespace geocaps

#endif  // GEOCAPS_ERROR_HPP_
