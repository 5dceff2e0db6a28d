#pragma once

#include <stdexcept>
#include <string>

namespace sdkprint {

// Exit-code taxonomy used by the CLI: 1 usage/config, 2 data, 3 invariant.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InvariantError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

}  // namespace sdkprint
