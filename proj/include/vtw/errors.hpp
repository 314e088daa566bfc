// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace vtw {

/// Base class for every error raised by the runtime.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration, record, argument or precondition.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Operand shapes do not agree.
class ShapeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Index or id outside of its permitted range.
class RangeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// A softmax row where every logit is masked out.
class DegenerateRowError : public Error {
public:
    using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace vtw
