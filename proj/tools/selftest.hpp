#pragma once

// Built-in oracle/invariant suite behind `eqreg selftest`.
// Returns 0 when every check passes, 1 otherwise.
int run_selftest(bool quick);
