#pragma once

#include <stdexcept>
#include <string>

namespace bvmdesign {

// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Bad input: configuration files, design specifications, arguments.
class ConfigError : public Error {
  public:
    using Error::Error;
};

class InvalidParameter : public ConfigError {
  public:
    using ConfigError::ConfigError;
};

class InvalidSize : public ConfigError {
  public:
    using ConfigError::ConfigError;
};

// Failures of the numerical machinery (MCMC initialization, estimation).
class NumericalError : public Error {
  public:
    using Error::Error;
};

class InitializationError : public NumericalError {
  public:
    using NumericalError::NumericalError;
};

class EstimationError : public NumericalError {
  public:
    using NumericalError::NumericalError;
};

}  // namespace bvmdesign
