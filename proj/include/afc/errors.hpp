#pragma once

#include <stdexcept>

namespace afc {

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Training aborted mid-stage (non-finite loss etc.); maps to exit code 2.
struct runtime_failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace afc
