#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace deftime {

/// Base class of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidSpec : public Error {
public:
    using Error::Error;
};

class LevelMismatch : public Error {
public:
    using Error::Error;
};

class NotSupermartingale : public Error {
public:
    NotSupermartingale(std::size_t level, std::size_t node, double excess)
        : Error("process is not a supermartingale at level " + std::to_string(level) +
                ", node " + std::to_string(node) + " (excess " + std::to_string(excess) + ")"),
          level(level), node(node) {}
    std::size_t level;
    std::size_t node;
};

class NotIncreasing : public Error {
public:
    using Error::Error;
};

/// Mass of the conditional distribution sits where the reference process has no atom.
class NotDifferentiable : public Error {
public:
    NotDifferentiable(std::size_t level, std::size_t node, std::size_t u)
        : Error("family is not differentiable: level " + std::to_string(level) + ", node " +
                std::to_string(node) + ", u index " + std::to_string(u)),
          level(level), node(node), u(u) {}
    std::size_t level;
    std::size_t node;
    std::size_t u;
};

class AxiomViolation : public Error {
public:
    using Error::Error;
};

class BadNormalization : public Error {
public:
    using Error::Error;
};

class NotAbsolutelyContinuous : public Error {
public:
    NotAbsolutelyContinuous(std::size_t level, std::size_t node, std::size_t u, std::size_t leaf)
        : Error("image measure charges a Cox-null atom: level " + std::to_string(level) +
                ", node " + std::to_string(node) + ", u index " + std::to_string(u)),
          level(level), node(node), u(u), leaf(leaf) {}
    std::size_t level;
    std::size_t node;
    std::size_t u;
    std::size_t leaf;
};

class HyZViolated : public Error {
public:
    using Error::Error;
};

class ZeroPredictableProjection : public Error {
public:
    using Error::Error;
};

class ConditionViolated : public Error {
public:
    ConditionViolated(std::string conditions, std::string location)
        : Error("natural-pair condition(s) " + conditions + " violated at " + location),
          conditions(std::move(conditions)), location(std::move(location)) {}
    std::string conditions;  // e.g. "ii,iii"
    std::string location;
};

class EmptyJumpSetAtStep : public Error {
public:
    using Error::Error;
};

class SchemeUnstable : public Error {
public:
    using Error::Error;
};

class CombinatorialOverflow : public Error {
public:
    using Error::Error;
};

class NotDifferentiableMarginal : public Error {
public:
    using Error::Error;
};

class ZeroAzema : public Error {
public:
    using Error::Error;
};

class ZeroDensity : public Error {
public:
    using Error::Error;
};

class NotGAdapted : public Error {
public:
    using Error::Error;
};

class ZeroAzemaPredictable : public Error {
public:
    using Error::Error;
};

class ZeroDensityPredictable : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class MissingArtifact : public Error {
public:
    using Error::Error;
};

}  // namespace deftime
