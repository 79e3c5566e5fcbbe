#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace velvet {

enum class Errc {
  EmptyReport,
  EmptyCorpus,
  CapExceeded,
  ShapeMismatch,
  RejectedRecord,
  CropLargerThanVolume,
  BatchTooSmall,
  EmptyContext,
  NoValidUnits,
  NoMaskedPositions,
  BadBlockSize,
  NonSquarePlane,
  MissingComponent,
  NonFiniteLoss,
  VersionMismatch,
  CorruptFile,
  ConfigError,
  IoError,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace velvet
