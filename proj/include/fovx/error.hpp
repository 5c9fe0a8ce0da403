#pragma once

#include <stdexcept>
#include <string>

namespace fovx {

// Every failure raised by the library derives from fovx::error so callers can
// map categories onto exit codes without string matching.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct format_error : error { using error::error; };
struct unsupported_error : error { using error::error; };
struct io_error : error { using error::error; };
struct validation_error : error { using error::error; };
struct geometry_error : error { using error::error; };
struct degenerate_input_error : error { using error::error; };
struct unsupported_shell_error : error { using error::error; };
struct completeness_error : error { using error::error; };
struct shape_error : error { using error::error; };
struct corruption_error : error { using error::error; };
struct config_error : error { using error::error; };
struct data_error : error { using error::error; };

} // namespace fovx
