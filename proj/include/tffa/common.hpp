#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tffa {

// Raised on bad user input (configs, file contents, incompatible shapes).
// The CLI maps this to exit code 2; everything else maps to 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void validate(bool cond, const std::string& msg) {
    if (!cond) throw ValidationError(msg);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

}  // namespace tffa
