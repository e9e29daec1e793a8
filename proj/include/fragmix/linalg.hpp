#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "fragmix/tensor.hpp"

namespace fragmix::linalg {

class SymmetryError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DegenerateError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

struct SymEig {
    Tensor values;   // [n], ascending
    Tensor vectors;  // [n x n], column i pairs with values[i]
};

// Cyclic Jacobi. Input must be symmetric to 1e-8 absolute.
SymEig sym_eig(const Tensor& a);

// V f(L) V^T with f(l) = l^power for l > eps and 0 otherwise.
// Differentiable through the Daleckii-Krein divided-difference formula.
// Throws DegenerateError when no eigenvalue exceeds eps.
Tensor sym_matrix_power(const Tensor& a, double power, double eps);

// Number of eigenvalues above eps; a diagnostic for truncated whitening.
std::size_t sym_rank(const Tensor& a, double eps);

}  // namespace fragmix::linalg
