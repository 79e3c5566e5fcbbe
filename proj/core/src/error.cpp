#include "velvet/error.hpp"

namespace velvet {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::EmptyReport: return "EmptyReport";
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::CapExceeded: return "CapExceeded";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::RejectedRecord: return "RejectedRecord";
    case Errc::CropLargerThanVolume: return "CropLargerThanVolume";
    case Errc::BatchTooSmall: return "BatchTooSmall";
    case Errc::EmptyContext: return "EmptyContext";
    case Errc::NoValidUnits: return "NoValidUnits";
    case Errc::NoMaskedPositions: return "NoMaskedPositions";
    case Errc::BadBlockSize: return "BadBlockSize";
    case Errc::NonSquarePlane: return "NonSquarePlane";
    case Errc::MissingComponent: return "MissingComponent";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::CorruptFile: return "CorruptFile";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace velvet
