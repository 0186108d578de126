#pragma once

#include <stdexcept>
#include <string>

namespace smartalert {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller violated an operation precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class NotFound : public Error {
public:
    using Error::Error;
};

/// State conflict, e.g. acting on an order that is no longer active.
class ConflictError : public Error {
public:
    using Error::Error;
};

/// Network or persistence failure. Callers may retry.
class TransportError : public Error {
public:
    using Error::Error;
};

} // namespace smartalert
