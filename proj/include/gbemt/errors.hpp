#pragma once

#include <stdexcept>
#include <string>

namespace gbemt {

// Maps onto the CLI exit codes: usage=1, data=2, training=3.
enum class ErrorKind { usage = 1, data = 2, training = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define GBEMT_DEFINE_ERROR(Name, Kind)                                         \
  class Name : public Error {                                                  \
   public:                                                                     \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {}   \
  };

GBEMT_DEFINE_ERROR(ConfigError, usage)
GBEMT_DEFINE_ERROR(SizeError, usage)
GBEMT_DEFINE_ERROR(TagError, usage)
GBEMT_DEFINE_ERROR(IoError, data)
GBEMT_DEFINE_ERROR(AlignmentError, data)
GBEMT_DEFINE_ERROR(DecodeError, data)
GBEMT_DEFINE_ERROR(PairingError, data)
GBEMT_DEFINE_ERROR(RangeError, data)
GBEMT_DEFINE_ERROR(VocabError, data)
GBEMT_DEFINE_ERROR(LengthError, data)
GBEMT_DEFINE_ERROR(FormatError, data)
GBEMT_DEFINE_ERROR(ShapeError, training)
GBEMT_DEFINE_ERROR(ContractError, training)
GBEMT_DEFINE_ERROR(DegenerateBatchError, training)

#undef GBEMT_DEFINE_ERROR

}  // namespace gbemt
