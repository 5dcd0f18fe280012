#pragma once

#include <stdexcept>
#include <string>

namespace gcav {

// Base of every error the toolkit raises on bad input or unsatisfiable
// preconditions. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define GCAV_DEFINE_ERROR(name)                 \
    class name : public Error {                 \
    public:                                     \
        using Error::Error;                     \
    };

GCAV_DEFINE_ERROR(DomainError)
GCAV_DEFINE_ERROR(DimensionMismatchError)
GCAV_DEFINE_ERROR(DegenerateDataError)
GCAV_DEFINE_ERROR(DegenerateError)
GCAV_DEFINE_ERROR(ConfigError)
GCAV_DEFINE_ERROR(CorpusError)
GCAV_DEFINE_ERROR(LengthError)
GCAV_DEFINE_ERROR(LayerMismatchError)
GCAV_DEFINE_ERROR(MissingCavError)
GCAV_DEFINE_ERROR(EmptyInputError)
GCAV_DEFINE_ERROR(InsufficientDataError)
GCAV_DEFINE_ERROR(FormatError)

#undef GCAV_DEFINE_ERROR

}  // namespace gcav
