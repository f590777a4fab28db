#include "gazekit/error.hpp"

namespace gazekit {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorKind::InvalidGazeDirection: return "InvalidGazeDirection";
    case ErrorKind::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorKind::DivergedRefinement: return "DivergedRefinement";
    case ErrorKind::DegenerateAxes: return "DegenerateAxes";
    case ErrorKind::FullyOutOfBounds: return "FullyOutOfBounds";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorKind::NonFiniteSample: return "NonFiniteSample";
    case ErrorKind::Io: return "Io";
    case ErrorKind::MalformedRecord: return "MalformedRecord";
    case ErrorKind::ConfigOutOfRange: return "ConfigOutOfRange";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::TruncatedRecord: return "TruncatedRecord";
    case ErrorKind::InsufficientPersons: return "InsufficientPersons";
    case ErrorKind::EmptyStore: return "EmptyStore";
    case ErrorKind::InsufficientSamples: return "InsufficientSamples";
    case ErrorKind::MissingFrames: return "MissingFrames";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace gazekit
