#pragma once

#include <stdexcept>
#include <string>

namespace logpeft {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ArgumentError : Error { using Error::Error; };
struct EmptyLine : Error { using Error::Error; };
struct EmptyInput : Error { using Error::Error; };
struct EmptyMask : Error { using Error::Error; };
struct EmptyBatch : Error { using Error::Error; };
struct EmptyDataset : Error { using Error::Error; };
struct LengthMismatch : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct NotScalar : Error { using Error::Error; };
struct TooLong : Error { using Error::Error; };
struct IdOutOfRange : Error { using Error::Error; };
struct SequenceTooLong : Error { using Error::Error; };
struct UnknownTarget : Error { using Error::Error; };
struct NoTrainableParams : Error { using Error::Error; };
struct VersionMismatch : Error { using Error::Error; };
struct CorruptCheckpoint : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

}  // namespace logpeft
