#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace featsteer {

// Fatal problems (bad files, shape mismatches, invalid arguments) throw;
// recoverable oddities are appended to a Warnings list when the caller
// passes one, and silently dropped otherwise.
using Warnings = std::vector<std::string>;

inline void warn(Warnings* w, std::string msg) {
    if (w) w->push_back(std::move(msg));
}

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace featsteer
