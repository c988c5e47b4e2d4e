#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace htc {

enum class ErrorCode {
    invalid_argument,
    config,
    io,
    checkpoint,
    shape,
    numeric,
    unsupported,
    internal,
};

struct Error : std::runtime_error {
    ErrorCode code;
    Error(ErrorCode c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
    throw Error(code, msg);
}

} // namespace htc

#define HTC_CHECK(cond, code, msg)                                        \
    do {                                                                  \
        if (!(cond)) ::htc::fail(::htc::ErrorCode::code, msg);            \
    } while (0)
