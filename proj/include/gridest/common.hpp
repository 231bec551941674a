#pragma once

#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace gridest {

using Complex = std::complex<double>;

constexpr double kPi = 3.14159265358979323846;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input data (files, records, ids).
class InputError : public Error {
public:
    using Error::Error;
};

/// An iterative solver failed to reach its tolerance.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, int iterations)
        : Error(what), iterations(iterations) {}
    int iterations = 0;
};

/// The estimation problem is rank deficient.
class UnobservableError : public Error {
public:
    UnobservableError(const std::string& what, int deficiency)
        : Error(what), deficiency(deficiency) {}
    int deficiency = 0;
};

/// Derives an independent stream seed from a master seed and a purpose tag,
/// so that e.g. noise draws and fault placement never share a stream.
std::uint64_t sub_seed(std::uint64_t master, const std::string& tag);

/// Seeded random stream with explicitly coded draw shapes. The stdlib
/// distributions are not pinned across implementations, so the normal and
/// Laplace transforms are spelled out here to keep runs reproducible.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    /// Uniform on [0, 1).
    double uniform() {
        // 53-bit mantissa draw
        return (gen_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (no state caching, one pair per call).
    double normal() {
        double u1 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    /// Laplace with scale b (variance 2 b^2), inverse-CDF transform.
    double laplace(double b) {
        double u = uniform() - 0.5;
        double s = u < 0 ? -1.0 : 1.0;
        double a = std::abs(u);
        if (a >= 0.5) a = 0.5 - 1e-16;
        return -b * s * std::log(1.0 - 2.0 * a);
    }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

namespace parallel {

/// Caps the worker count used by the OpenMP kernels. 1 forces the serial
/// path; 0 restores the OpenMP default. All parallel loops in the library
/// reduce in a fixed order, so results do not depend on this setting.
void set_max_threads(int n);
int max_threads();

} // namespace parallel

} // namespace gridest
