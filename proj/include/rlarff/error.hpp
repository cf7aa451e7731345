// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rlarff {

/// Failure categories shared by every module. The numeric values are part of
/// the C API (see rlarff.h) and must stay stable.
enum class Errc : int {
    dimension = 1,
    degenerate_input = 2,
    contract = 3,
    config = 4,
    degenerate_channel = 5,
    stratification = 6,
    training_diverged = 7,
    protocol = 8,
    optimizer_failure = 9,
    io = 10,
    format = 11,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace rlarff
