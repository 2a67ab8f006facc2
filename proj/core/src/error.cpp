#include "hakw/error.hpp"

namespace hakw {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::MalformedHeader: return "MalformedHeader";
    case Errc::UnsupportedEncoding: return "UnsupportedEncoding";
    case Errc::Unrepairable: return "Unrepairable";
    case Errc::InvalidRate: return "InvalidRate";
    case Errc::InvalidLength: return "InvalidLength";
    case Errc::MissingRoot: return "MissingRoot";
    case Errc::EmptyIngest: return "EmptyIngest";
    case Errc::BadRatios: return "BadRatios";
    case Errc::UnknownLabel: return "UnknownLabel";
    case Errc::BadManifest: return "BadManifest";
    case Errc::ClipTooShort: return "ClipTooShort";
    case Errc::ConfigMismatch: return "ConfigMismatch";
    case Errc::BadConfig: return "BadConfig";
    case Errc::BadCache: return "BadCache";
    case Errc::BadFactor: return "BadFactor";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NanLoss: return "NanLoss";
    case Errc::EmptyClass: return "EmptyClass";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::FeatureConfigMismatch: return "FeatureConfigMismatch";
    case Errc::BadMagic: return "BadMagic";
    case Errc::VersionUnsupported: return "VersionUnsupported";
    case Errc::CorruptDirectory: return "CorruptDirectory";
    case Errc::EmptyCalibration: return "EmptyCalibration";
    case Errc::RateMismatch: return "RateMismatch";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace hakw
