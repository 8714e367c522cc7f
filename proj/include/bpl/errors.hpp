#pragma once

#include <stdexcept>
#include <string>

namespace bpl {

// Error families map onto the CLI exit codes: validation -> 2, io -> 3,
// numeric -> 4. Library code throws the leaf types only.

struct ValidationFamilyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoFamilyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericFamilyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// -- validation family --------------------------------------------------

struct DimensionError : ValidationFamilyError {
    using ValidationFamilyError::ValidationFamilyError;
};

struct ValidationError : ValidationFamilyError {
    using ValidationFamilyError::ValidationFamilyError;
};

struct SizeError : ValidationFamilyError {
    using ValidationFamilyError::ValidationFamilyError;
};

struct FormatError : ValidationFamilyError {
    using ValidationFamilyError::ValidationFamilyError;
};

struct ParseError : ValidationFamilyError {
    using ValidationFamilyError::ValidationFamilyError;
};

struct UndefinedMetricError : ValidationFamilyError {
    using ValidationFamilyError::ValidationFamilyError;
};

// -- io family -----------------------------------------------------------

struct NotFoundError : IoFamilyError {
    using IoFamilyError::IoFamilyError;
};

struct IoError : IoFamilyError {
    using IoFamilyError::IoFamilyError;
};

// -- numeric family -------------------------------------------------------

struct DecompositionError : NumericFamilyError {
    using NumericFamilyError::NumericFamilyError;
};

struct SingularPencilError : NumericFamilyError {
    using NumericFamilyError::NumericFamilyError;
};

struct DegenerateProjectionError : NumericFamilyError {
    using NumericFamilyError::NumericFamilyError;
};

struct NoRunnerUpError : NumericFamilyError {
    using NumericFamilyError::NumericFamilyError;
};

struct StepSizeError : NumericFamilyError {
    using NumericFamilyError::NumericFamilyError;
};

struct UndefinedGammaError : NumericFamilyError {
    using NumericFamilyError::NumericFamilyError;
};

}  // namespace bpl
