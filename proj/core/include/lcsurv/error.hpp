#pragma once

#include <stdexcept>
#include <string>

namespace lcsurv {

// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
    dimension,
    configuration,
    argument,
    state,
    numeric,
    undefined,  // loss or metric undefined for the given input
    data,
    io,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

#define LCSURV_DEFINE_ERROR(Name, Kind)                                        \
    class Name : public Error {                                                \
    public:                                                                    \
        explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
    };

LCSURV_DEFINE_ERROR(DimensionError, dimension)
LCSURV_DEFINE_ERROR(ConfigError, configuration)
LCSURV_DEFINE_ERROR(ArgumentError, argument)
LCSURV_DEFINE_ERROR(StateError, state)
LCSURV_DEFINE_ERROR(NumericError, numeric)
LCSURV_DEFINE_ERROR(UndefinedError, undefined)
LCSURV_DEFINE_ERROR(DataError, data)
LCSURV_DEFINE_ERROR(IoError, io)

#undef LCSURV_DEFINE_ERROR

}  // namespace lcsurv
