#pragma once

#include <stdexcept>
#include <string>

namespace setrank {

enum class errc {
  parse,          // malformed input line
  no_positives,   // binarization produced an empty dataset
  empty_dataset,  // filtering removed every user
  bad_magic,      // file does not start with the expected magic bytes
  bad_version,    // file format version not supported
  truncated,      // file ended before the declared payload
  dim_mismatch,   // model dimensions do not match the dataset
  out_of_range,   // user/item index outside the valid range
  invalid_argument,
  divergence,     // non-finite value during training
  io,             // could not open/read/write a file
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::parse: return "parse";
    case errc::no_positives: return "no_positives";
    case errc::empty_dataset: return "empty_dataset";
    case errc::bad_magic: return "bad_magic";
    case errc::bad_version: return "bad_version";
    case errc::truncated: return "truncated";
    case errc::dim_mismatch: return "dim_mismatch";
    case errc::out_of_range: return "out_of_range";
    case errc::invalid_argument: return "invalid_argument";
    case errc::divergence: return "divergence";
    case errc::io: return "io";
  }
  return "unknown";
}

class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  errc code() const { return code_; }

 private:
  errc code_;
};

}  // namespace setrank
