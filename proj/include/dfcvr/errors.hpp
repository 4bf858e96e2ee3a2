#pragma once

#include <stdexcept>
#include <string>

namespace dfcvr {

// Malformed or inconsistent input data (CSV tables, device documents,
// dimension mismatches between forecasts and networks).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration values (negative weights, empty sweeps, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numerical routine could not produce a usable result: solver breakdown,
// infeasible stage problem, power-flow divergence.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dfcvr
