#pragma once

namespace stanceforge {

// Runs one CLI invocation. Returns 0 on success, 1 on validation errors
// (including bad usage) and 2 on I/O or endpoint errors.
int dispatch(int argc, char** argv);

}  // namespace stanceforge
