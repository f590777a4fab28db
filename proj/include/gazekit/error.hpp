#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gazekit {

enum class ErrorKind {
  NonPositiveDepth,
  InvalidGazeDirection,
  DegenerateConfiguration,
  DivergedRefinement,
  DegenerateAxes,
  FullyOutOfBounds,
  ShapeMismatch,
  EmptyTrainingSet,
  NonFiniteSample,
  Io,
  MalformedRecord,
  ConfigOutOfRange,
  BadMagic,
  TruncatedRecord,
  InsufficientPersons,
  EmptyStore,
  InsufficientSamples,
  MissingFrames,
  InvalidArgument,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (and the CLI
// exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

}  // namespace gazekit
