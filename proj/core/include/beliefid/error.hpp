#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace beliefid {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A model (POMDP, MDP, policy, learned model) violates a structural precondition.
class InvalidModel : public Error {
 public:
  using Error::Error;
};

/// A caller-supplied argument is out of range or inconsistent.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// An observation has (numerically) zero probability under the current belief.
class ZeroProbabilityObservation : public Error {
 public:
  using Error::Error;
};

/// Reachable belief expansion exceeded its node limit.
class BeliefOverflow : public Error {
 public:
  BeliefOverflow(const std::string& what, std::size_t depth)
      : Error(what), depth_(depth) {}
  std::size_t depth() const noexcept { return depth_; }

 private:
  std::size_t depth_;
};

/// Training loss kept worsening after the step size was already halved.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

/// A module error raised inside one experiment run, tagged with its seed and stage.
class StageError : public Error {
 public:
  StageError(std::uint64_t seed, const std::string& stage, const std::string& what)
      : Error("seed " + std::to_string(seed) + ", stage " + stage + ": " + what), seed_(seed), stage_(stage) {}
  std::uint64_t seed() const noexcept { return seed_; }
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::uint64_t seed_;
  std::string stage_;
};

/// Malformed input document (JSON instance, checkpoint, config).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace beliefid
