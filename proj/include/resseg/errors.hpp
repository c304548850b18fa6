#pragma once

#include <stdexcept>
#include <string>

namespace resseg {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define RESSEG_DEFINE_ERROR(Name)                       \
  class Name : public Error {                           \
   public:                                              \
    explicit Name(const std::string& what) : Error(what) {} \
  }

RESSEG_DEFINE_ERROR(ShapeError);
RESSEG_DEFINE_ERROR(IndexError);
RESSEG_DEFINE_ERROR(NumericError);
RESSEG_DEFINE_ERROR(StateError);
RESSEG_DEFINE_ERROR(LabelError);
RESSEG_DEFINE_ERROR(DegenerateInputError);
RESSEG_DEFINE_ERROR(FormatError);
RESSEG_DEFINE_ERROR(CheckpointError);
RESSEG_DEFINE_ERROR(GenerationError);
RESSEG_DEFINE_ERROR(PaletteError);
RESSEG_DEFINE_ERROR(ConfigError);

#undef RESSEG_DEFINE_ERROR

}  // namespace resseg
