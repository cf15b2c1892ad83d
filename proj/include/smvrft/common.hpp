#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace smvrft {

using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Matrix = Eigen::MatrixXd;
using Signal = std::vector<double>;

/// Failure classes surfaced by the library. The CLI maps them to exit codes.
enum class ErrorKind {
    input,       // malformed files, bad configuration
    infeasible,  // optimisation problem without a solution
    unstable,    // closed-loop divergence
    numerical,   // solver breakdown, singular data
    capacity,    // configured limits exceeded (vertex cap, iteration cap)
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) {
        throw std::invalid_argument(message);
    }
}

}  // namespace smvrft
