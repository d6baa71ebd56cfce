#pragma once

#include <stdexcept>
#include <string>

namespace spanforge {

// Bad user input: malformed files, invalid configuration, violated data
// invariants. Maps to SF_ERR_INVALID / CLI exit code 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Broken internal contract (shape mismatch, non-scalar loss, missing
// self-loop). Indicates a caller bug rather than bad data.
class ContractError : public std::logic_error {
public:
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Failure while executing an otherwise valid request: NaN during training,
// corrupt checkpoint, unwritable output. Maps to SF_ERR_RUNTIME / exit 1.
class PipelineError : public std::runtime_error {
public:
    explicit PipelineError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace spanforge
