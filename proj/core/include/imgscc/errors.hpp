#pragma once

#include <stdexcept>
#include <string>

namespace imgscc {

// Error taxonomy used across the library.  Kind groups errors by how a
// front end should report them: Input for malformed or inconsistent user
// data, Numeric for conditions detected during computation, Config for
// invalid parameter combinations.
class Error : public std::runtime_error {
 public:
  enum class Kind { Input, Numeric, Config };

  Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct ParseError : Error {
  explicit ParseError(const std::string& m) : Error(Kind::Input, m) {}
};
struct InvalidMesh : Error {
  explicit InvalidMesh(const std::string& m) : Error(Kind::Input, m) {}
};
struct DomainMismatch : Error {
  explicit DomainMismatch(const std::string& m) : Error(Kind::Input, m) {}
};
struct GridMismatch : Error {
  explicit GridMismatch(const std::string& m) : Error(Kind::Input, m) {}
};
struct DegenerateTriangle : Error {
  explicit DegenerateTriangle(const std::string& m) : Error(Kind::Numeric, m) {}
};
struct SingularSystem : Error {
  explicit SingularSystem(const std::string& m) : Error(Kind::Numeric, m) {}
};
struct NotPD : Error {
  explicit NotPD(const std::string& m) : Error(Kind::Numeric, m) {}
};
struct NoPositiveEigenvalues : Error {
  explicit NoPositiveEigenvalues(const std::string& m) : Error(Kind::Numeric, m) {}
};
struct DegenerateCovariance : Error {
  explicit DegenerateCovariance(const std::string& m) : Error(Kind::Numeric, m) {}
};
struct AllInvalid : Error {
  explicit AllInvalid(const std::string& m) : Error(Kind::Numeric, m) {}
};
struct OrderTooHigh : Error {
  explicit OrderTooHigh(const std::string& m) : Error(Kind::Config, m) {}
};
struct BadConfig : Error {
  explicit BadConfig(const std::string& m) : Error(Kind::Config, m) {}
};

}  // namespace imgscc
