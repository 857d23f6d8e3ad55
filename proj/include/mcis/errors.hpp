#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mcis {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
public:
    using Error::Error;
};

/// A sampler was handed a model it cannot run (e.g. proposal density zero at a proposed point).
class InvalidModel : public Error {
public:
    using Error::Error;
};

/// Every reference density vanishes at a sampled point.
class UndefinedPoint : public Error {
public:
    using Error::Error;
};

class InsufficientData : public Error {
public:
    using Error::Error;
};

class InsufficientRegeneration : public InsufficientData {
public:
    using InsufficientData::InsufficientData;
};

/// A ratio estimator whose denominator is zero.
class DegenerateDenominator : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// The constrained quasi-likelihood maximizer ran out of iterations.
/// Carries the best iterate found and its projected gradient max-norm.
class ConvergenceFailure : public Error {
public:
    ConvergenceFailure(const std::string& what, std::vector<double> best_iterate, double grad_norm)
        : Error(what), best_iterate_(std::move(best_iterate)), grad_norm_(grad_norm) {}

    const std::vector<double>& best_iterate() const noexcept { return best_iterate_; }
    double grad_norm() const noexcept { return grad_norm_; }

private:
    std::vector<double> best_iterate_;
    double grad_norm_;
};

}  // namespace mcis
