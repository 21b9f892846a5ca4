#pragma once

#include <stdexcept>
#include <string>

namespace ssc {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error { using Error::Error; };
struct NonScalarLoss : Error { using Error::Error; };
struct NonFiniteValue : Error { using Error::Error; };
struct NonFinitePart : Error { using Error::Error; };
struct NonFiniteLoss : Error { using Error::Error; };
struct NonPositiveDepth : Error { using Error::Error; };
struct BehindCamera : Error { using Error::Error; };
struct IndexOutOfRange : Error { using Error::Error; };
struct IndivisibleGroups : Error { using Error::Error; };
struct AllIgnored : Error { using Error::Error; };
struct DimMismatch : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

} // namespace ssc
