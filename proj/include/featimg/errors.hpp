#pragma once

#include <stdexcept>
#include <string>

namespace featimg {

/// Base of every error the library raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input files that do not follow the documented layout.
class SchemaError : public Error { using Error::Error; };
// Values that parse but break a domain invariant.
class ValidationError : public Error { using Error::Error; };
// Duplicate keys (video ids listed twice).
class ConflictError : public Error { using Error::Error; };
class BoundsError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class SpecMismatchError : public Error { using Error::Error; };
class ChecksumError : public Error { using Error::Error; };
class VersionError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class PreconditionError : public Error { using Error::Error; };

/// Raised when a training loop sees a non-finite loss; the message carries
/// epoch, batch and the offending value.
class TrainingError : public Error {
public:
    TrainingError(const std::string& what, int epoch, int batch, double loss)
        : Error(what), epoch_(epoch), batch_(batch), loss_(loss) {}
    int epoch() const noexcept { return epoch_; }
    int batch() const noexcept { return batch_; }
    double loss() const noexcept { return loss_; }

private:
    int epoch_;
    int batch_;
    double loss_;
};

/// Pretrained backbone weights requested but not present in the cache.
class WeightsUnavailableError : public Error { using Error::Error; };

/// Bad command line or configuration; the CLI maps it to exit code 2.
class UsageError : public Error { using Error::Error; };

} // namespace featimg
