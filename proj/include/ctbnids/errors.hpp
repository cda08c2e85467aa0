#ifndef CTBNIDS_ERRORS_HPP
#define CTBNIDS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace ctbnids {

// Malformed files, bad flags, violated preconditions on user-supplied data.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Zero-probability evidence, particle degeneracy and similar numerical
// failures that are not the caller's fault.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ctbnids

#endif
