#pragma once

#include <stdexcept>
#include <string>

namespace ctbcf {

/// Broad failure categories. The CLI maps these onto exit codes.
enum class ErrorKind {
  Internal,     // bugs, numerical breakdown
  Input,        // bad files, schema problems, invalid configuration
  Consistency,  // artifacts that do not belong together
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct SchemaError : Error {
  explicit SchemaError(const std::string& w) : Error(ErrorKind::Input, "schema error: " + w) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error(ErrorKind::Input, "parse error: " + w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::Input, "configuration error: " + w) {}
};
struct DegenerateInputError : Error {
  explicit DegenerateInputError(const std::string& w)
      : Error(ErrorKind::Input, "degenerate input: " + w) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error(ErrorKind::Input, "shape error: " + w) {}
};
struct RankDeficiencyError : Error {
  explicit RankDeficiencyError(const std::string& w)
      : Error(ErrorKind::Input, "rank deficiency: " + w) {}
};
struct CapabilityError : Error {
  explicit CapabilityError(const std::string& w)
      : Error(ErrorKind::Input, "capability error: " + w) {}
};
struct ConsistencyError : Error {
  explicit ConsistencyError(const std::string& w)
      : Error(ErrorKind::Consistency, "consistency error: " + w) {}
};
/// Raised when the sampler's residual vanishes (the fit interpolates the data).
struct DegenerateFitError : Error {
  explicit DegenerateFitError(const std::string& w)
      : Error(ErrorKind::Internal, "degenerate fit: " + w) {}
};

}  // namespace ctbcf
