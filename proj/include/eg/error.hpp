#pragma once

#include <stdexcept>
#include <string>

namespace eg {

enum class ErrorKind {
  Dimension,
  Numeric,
  DegenerateVector,
  Contract,
  Parameter,
  Data,
  Format,
  State,
  Graph,
};

// Base of every error raised by the library. The kind decides the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define EG_DEFINE_ERROR(Name, Kind)                                      \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

EG_DEFINE_ERROR(DimensionError, Dimension)
EG_DEFINE_ERROR(NumericError, Numeric)
EG_DEFINE_ERROR(DegenerateVectorError, DegenerateVector)
EG_DEFINE_ERROR(ContractError, Contract)
EG_DEFINE_ERROR(ParameterError, Parameter)
EG_DEFINE_ERROR(DataError, Data)
EG_DEFINE_ERROR(FormatError, Format)
EG_DEFINE_ERROR(StateError, State)
EG_DEFINE_ERROR(GraphError, Graph)

#undef EG_DEFINE_ERROR

}  // namespace eg
