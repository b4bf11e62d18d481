#ifndef AAMULET_ERROR_HPP_
#define AAMULET_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace aamulet {

// Error taxonomy shared by all modules. The CLI maps these onto its
// documented exit codes (2 usage/config, 3 divergence, 4 checkpoint,
// 5 missing data).
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingDataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace aamulet

#endif  // AAMULET_ERROR_HPP_
