#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flowforget {

// Bad configuration (file contents, key ranges, world construction).
// The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A state turned non-finite during integration or training.
struct DivergenceError : std::runtime_error {
    DivergenceError(const std::string& what, std::size_t step)
        : std::runtime_error(what), step_index(step) {}
    std::size_t step_index;
};

}  // namespace flowforget
