#pragma once

#include <stdexcept>
#include <string>

namespace ropdda {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define ROPDDA_DEFINE_ERROR(Name)                     \
    class Name : public Error {                       \
    public:                                           \
        explicit Name(const std::string &what)        \
            : Error(std::string(#Name ": ") + what) {} \
    }

// disasm
ROPDDA_DEFINE_ERROR(UnknownOpcode);
ROPDDA_DEFINE_ERROR(TruncatedInstruction);
ROPDDA_DEFINE_ERROR(InvalidImage);

// datagen
ROPDDA_DEFINE_ERROR(InfeasibleSpec);
ROPDDA_DEFINE_ERROR(InsufficientSamples);
ROPDDA_DEFINE_ERROR(FormatError);
ROPDDA_DEFINE_ERROR(IoError);

// nn
ROPDDA_DEFINE_ERROR(ShapeMismatch);
ROPDDA_DEFINE_ERROR(StaleTrace);

// mmd
ROPDDA_DEFINE_ERROR(NonpositiveSigma);
ROPDDA_DEFINE_ERROR(EmptySet);

// trainer
ROPDDA_DEFINE_ERROR(UnbalancedData);
ROPDDA_DEFINE_ERROR(LabelLeak);
ROPDDA_DEFINE_ERROR(MissingValidation);

// evalkit
ROPDDA_DEFINE_ERROR(UndefinedMetric);
ROPDDA_DEFINE_ERROR(UndecodableSample);

// configuration
ROPDDA_DEFINE_ERROR(ConfigError);

#undef ROPDDA_DEFINE_ERROR

} // namespace ropdda
