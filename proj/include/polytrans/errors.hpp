#pragma once

#include <stdexcept>
#include <string>

namespace polytrans {

// Failure classes map onto CLI exit codes (see tools/polytrans_main.cpp).

/// Malformed input file (attribute index, blob, manifest).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid configuration: unknown keys, empty domains, class starvation.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Caller violated an operation's precondition (shape, domain id, lengths).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Non-finite or exploding loss/gradient. `component` names the culprit.
struct NumericalError : std::runtime_error {
  NumericalError(const std::string& component, const std::string& what)
      : std::runtime_error(what), component(component) {}
  std::string component;
};

/// Pair checkpoints that cannot be merged into one joint model.
struct TransplantError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Chain text that does not follow `src>dst(,src>dst)*`.
struct ParseError : std::runtime_error {
  ParseError(std::size_t position, const std::string& what)
      : std::runtime_error(what + " (at position " + std::to_string(position) + ")"),
        position(position) {}
  std::size_t position;
};

/// Filesystem and image decoding failures.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace polytrans
