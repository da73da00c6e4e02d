#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace calbound {

// Base class for all library errors. Subclasses carry the context needed to
// act on the failure (column index, iteration count, step number).
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeMismatch : Error {
  explicit ShapeMismatch(const std::string& msg) : Error("shape mismatch: " + msg) {}
};

struct ZeroVarianceColumn : Error {
  std::size_t column;
  explicit ZeroVarianceColumn(std::size_t col)
      : Error("column " + std::to_string(col) + " has variance below the floor"), column(col) {}
};

struct NoConvergence : Error {
  std::size_t iterations;
  explicit NoConvergence(std::size_t iters)
      : Error("iteration cap exceeded after " + std::to_string(iters) + " sweeps"), iterations(iters) {}
};

struct DegenerateInput : Error {
  explicit DegenerateInput(const std::string& msg) : Error("degenerate input: " + msg) {}
};

struct EmptyInput : Error {
  explicit EmptyInput(const std::string& msg) : Error("empty input: " + msg) {}
};

struct InvalidSpec : Error {
  explicit InvalidSpec(const std::string& violated) : Error("invalid spec: " + violated) {}
};

struct ZeroNormRow : Error {
  std::size_t row;
  explicit ZeroNormRow(std::size_t r)
      : Error("projected row " + std::to_string(r) + " has near-zero norm"), row(r) {}
};

struct InsufficientPool : Error {
  explicit InsufficientPool(const std::string& msg) : Error("insufficient pool: " + msg) {}
};

struct DegenerateDenominator : Error {
  explicit DegenerateDenominator(const std::string& msg) : Error("degenerate denominator: " + msg) {}
};

struct DivergenceDetected : Error {
  std::size_t step;
  explicit DivergenceDetected(std::size_t s)
      : Error("loss became non-finite at step " + std::to_string(s)), step(s) {}
};

struct SchemaMismatch : Error {
  explicit SchemaMismatch(const std::string& msg) : Error("schema mismatch: " + msg) {}
};

struct NonFiniteValue : Error {
  explicit NonFiniteValue(const std::string& msg) : Error("non-finite value: " + msg) {}
};

}  // namespace calbound
