#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace contab {

// Row-major throughout: sample i lives in row i.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Class indices; kUnlabeled marks a row without a label.
using Labels = std::vector<int>;
inline constexpr int kUnlabeled = -1;

/// Bad input data, schema mismatch, unreadable files. CLI exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments. CLI exit code 1.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A value went non-finite during a forward/backward pass or optimizer step.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a. Stable across platforms, used to fingerprint serialized state.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Formats a double with 17 significant digits (round-trip exact).
std::string format_double(double v);

}  // namespace contab
