#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hakw {

enum class Errc {
  // audio_io
  MalformedHeader,
  UnsupportedEncoding,
  Unrepairable,
  InvalidRate,
  InvalidLength,
  // corpus
  MissingRoot,
  EmptyIngest,
  BadRatios,
  UnknownLabel,
  BadManifest,
  // features
  ClipTooShort,
  ConfigMismatch,
  BadConfig,
  BadCache,
  // augment
  BadFactor,
  // nn
  ShapeMismatch,
  NanLoss,
  EmptyClass,
  LabelOutOfRange,
  FeatureConfigMismatch,
  // deploy
  BadMagic,
  VersionUnsupported,
  CorruptDirectory,
  EmptyCalibration,
  RateMismatch,
  // generic
  Io,
};

std::string_view errc_name(Errc code) noexcept;

// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace hakw
