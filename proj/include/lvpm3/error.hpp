#pragma once

#include <stdexcept>
#include <string>

namespace lvpm3 {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
  public:
    using Error::Error;
};

class VocabularyError : public Error {
  public:
    using Error::Error;
};

class LanguageError : public Error {
  public:
    using Error::Error;
};

class FormatError : public Error {
  public:
    using Error::Error;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

class VariantError : public Error {
  public:
    using Error::Error;
};

class NumericError : public Error {
  public:
    using Error::Error;
};

class BackwardError : public Error {
  public:
    using Error::Error;
};

class DegenerateBatchError : public Error {
  public:
    using Error::Error;
};

} // namespace lvpm3
