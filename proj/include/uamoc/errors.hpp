#pragma once

#include <stdexcept>
#include <string>

namespace uamoc {

/// Base class of every error raised by the library. The `kind()` string is
/// stable and is what the CLI prints next to the message.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define UAMOC_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                      \
   public:                                                         \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  };

UAMOC_DEFINE_ERROR(AngleNearPi)
UAMOC_DEFINE_ERROR(DimensionMismatch)
UAMOC_DEFINE_ERROR(SOutOfRange)
UAMOC_DEFINE_ERROR(ParseError)
UAMOC_DEFINE_ERROR(ValidationError)
UAMOC_DEFINE_ERROR(UnknownFrame)
UAMOC_DEFINE_ERROR(SingularInertia)
UAMOC_DEFINE_ERROR(RankDeficientContact)
UAMOC_DEFINE_ERROR(MissionValidationError)
UAMOC_DEFINE_ERROR(NonPositiveQuu)
UAMOC_DEFINE_ERROR(NoProgress)
UAMOC_DEFINE_ERROR(NonFiniteRollout)
UAMOC_DEFINE_ERROR(StaleSolution)
UAMOC_DEFINE_ERROR(SolverFailure)
UAMOC_DEFINE_ERROR(PlantDiverged)
UAMOC_DEFINE_ERROR(TaskOutsideLog)

#undef UAMOC_DEFINE_ERROR

}  // namespace uamoc
