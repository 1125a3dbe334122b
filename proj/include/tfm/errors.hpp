#pragma once

#include <stdexcept>
#include <string>

namespace tfm {

/// Error classes map onto distinct CLI exit codes (see tools/).
enum class ErrorClass {
  BadArgs,   // exit 2: unusable invocation or config
  BadData,   // exit 3: malformed or inconsistent input data
  Numeric,   // exit 4: non-finite values, failed numeric contract
  Io,        // exit 5: filesystem / serialization
};

class Error : public std::runtime_error {
public:
  Error(ErrorClass cls, std::string message)
      : std::runtime_error(std::move(message)), cls_(cls) {}

  ErrorClass error_class() const { return cls_; }

private:
  ErrorClass cls_;
};

inline Error bad_args(std::string msg) { return Error(ErrorClass::BadArgs, std::move(msg)); }
inline Error bad_data(std::string msg) { return Error(ErrorClass::BadData, std::move(msg)); }
inline Error numeric_error(std::string msg) { return Error(ErrorClass::Numeric, std::move(msg)); }
inline Error io_error(std::string msg) { return Error(ErrorClass::Io, std::move(msg)); }

} // namespace tfm
