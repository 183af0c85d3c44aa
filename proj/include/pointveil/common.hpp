#pragma once

#include <stdexcept>
#include <string>

namespace pointveil {

// Error taxonomy shared by the library and the CLI. Each category maps to a
// distinct CLI exit code, so misuse is machine-distinguishable.
enum class errc {
  config    = 2,  // bad configuration (unknown key, dimension mismatch, ...)
  input     = 3,  // invalid runtime input (empty cloud, label out of range)
  format    = 4,  // bad magic / malformed file
  version   = 5,  // file from an unknown format version
  checksum  = 6,  // stored checksum does not match content
  usage     = 7,  // API or CLI misuse (backward before forward, missing flag)
  io        = 8,  // filesystem failure, truncated file
  training  = 9,  // divergence or non-finite loss during training
  validation = 10 // loaded object fails its own invariants
};

class error : public std::runtime_error {
public:
  error(errc c, const std::string& what) : std::runtime_error(what), code_(c) {}
  errc code() const { return code_; }

  const char* category() const {
    switch (code_) {
      case errc::config:     return "config";
      case errc::input:      return "input";
      case errc::format:     return "format";
      case errc::version:    return "version";
      case errc::checksum:   return "checksum";
      case errc::usage:      return "usage";
      case errc::io:         return "io";
      case errc::training:   return "training";
      case errc::validation: return "validation";
    }
    return "unknown";
  }

private:
  errc code_;
};

[[noreturn]] inline void fail(errc c, const std::string& what) { throw error(c, what); }

inline void require(bool cond, errc c, const std::string& what) {
  if (!cond) fail(c, what);
}

}  // namespace pointveil
