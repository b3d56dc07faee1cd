#pragma once

#include <stdexcept>
#include <string>

namespace falldet {

/// Base class for every error raised by the library. `kind()` is the stable
/// machine-readable name (used in logs and ablation tables).
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define FALLDET_DEFINE_ERROR(Name)                                   \
  class Name : public ::falldet::Error {                             \
   public:                                                           \
    explicit Name(const std::string& what) : Error(#Name, what) {}   \
  }

// audio_io
FALLDET_DEFINE_ERROR(MalformedWav);
FALLDET_DEFINE_ERROR(UnsupportedEncoding);
FALLDET_DEFINE_ERROR(ClipTooLong);
FALLDET_DEFINE_ERROR(EmptyCategory);
FALLDET_DEFINE_ERROR(DuplicatePath);
FALLDET_DEFINE_ERROR(MalformedManifest);
FALLDET_DEFINE_ERROR(IoError);

// augmentation
FALLDET_DEFINE_ERROR(ScopeViolation);
FALLDET_DEFINE_ERROR(ParamOutOfRange);
FALLDET_DEFINE_ERROR(EmptyPlan);
FALLDET_DEFINE_ERROR(UnknownTransform);

// features
FALLDET_DEFINE_ERROR(SegmentTooLong);
FALLDET_DEFINE_ERROR(TooFewFrames);
FALLDET_DEFINE_ERROR(InvalidFftSize);
FALLDET_DEFINE_ERROR(ClipMismatch);
FALLDET_DEFINE_ERROR(MalformedFeatureCache);

// transformer
FALLDET_DEFINE_ERROR(ShapeMismatch);
FALLDET_DEFINE_ERROR(NonFiniteActivation);
FALLDET_DEFINE_ERROR(NonFiniteGradient);
FALLDET_DEFINE_ERROR(DivergedTraining);
FALLDET_DEFINE_ERROR(ChecksumMismatch);
FALLDET_DEFINE_ERROR(VersionMismatch);
FALLDET_DEFINE_ERROR(InvalidConfig);

// experiments
FALLDET_DEFINE_ERROR(MissingCategory);
FALLDET_DEFINE_ERROR(EmptySplit);

// sentinel
FALLDET_DEFINE_ERROR(StreamUnderrun);
FALLDET_DEFINE_ERROR(CheckpointMismatch);
FALLDET_DEFINE_ERROR(DispatchFailed);

#undef FALLDET_DEFINE_ERROR

}  // namespace falldet
