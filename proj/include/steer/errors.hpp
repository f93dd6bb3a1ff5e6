#pragma once

#include <exception>
#include <stdexcept>
#include <string>

namespace steer {

// Base of every error the library raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or corrupt file contents (bad magic, truncated header, bad index).
class FormatError : public Error {
public:
    using Error::Error;
};

// A tensor is missing, unexpected, or has the wrong shape. Names the tensor.
class ShapeError : public Error {
public:
    ShapeError(std::string tensor, const std::string& what)
        : Error("tensor '" + tensor + "': " + what), tensor_(std::move(tensor)) {}
    const std::string& tensor() const noexcept { return tensor_; }

private:
    std::string tensor_;
};

// Config fields are individually valid but mutually inconsistent, or missing.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Token id, layer index or sequence length outside the allowed range.
class RangeError : public Error {
public:
    using Error::Error;
};

class NonFiniteError : public Error {
public:
    explicit NonFiniteError(int layer)
        : Error("non-finite activation after layer " + std::to_string(layer)), layer_(layer) {}
    int layer() const noexcept { return layer_; }

private:
    int layer_;
};

class TokenizeError : public Error {
public:
    using Error::Error;
};

// A control vector or plan was built for a different model (or hidden size).
class ModelMismatchError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

class DuplicateError : public Error {
public:
    using Error::Error;
};

class ChecksumError : public Error {
public:
    ChecksumError(std::string trait, const std::string& what)
        : Error("checksum mismatch for trait '" + trait + "': " + what), trait_(std::move(trait)) {}
    const std::string& trait() const noexcept { return trait_; }

private:
    std::string trait_;
};

// Caller-side contract violation (empty pair set, no layers, mismatched lengths...).
class PreconditionError : public Error {
public:
    using Error::Error;
};

// Failure talking to a text-generation backend.
class BackendError : public Error {
public:
    using Error::Error;
};

// Seed elicitation produced neither words nor behaviors.
class EmptySeedError : public Error {
public:
    using Error::Error;
};

// Wraps a failure inside a multi-stage pipeline with the stage that raised it.
// The original exception stays reachable through cause().
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what, std::exception_ptr cause)
        : Error(stage + ": " + what), stage_(std::move(stage)), cause_(std::move(cause)) {}
    const std::string& stage() const noexcept { return stage_; }
    const std::exception_ptr& cause() const noexcept { return cause_; }

private:
    std::string stage_;
    std::exception_ptr cause_;
};

}  // namespace steer
