#ifndef ENTCLT_ERRORS_HPP
#define ENTCLT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace entclt {

/// Bad user input: unknown family, invalid parameters, malformed files.
struct input_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Grid too small, incompatible grids, or mass lost beyond tolerance.
struct grid_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Zero or numerically vanishing variance.
struct degenerate_error : std::domain_error {
  using std::domain_error::domain_error;
};

/// A computed quantity violated a mathematical guarantee.
struct violation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace entclt

#endif
