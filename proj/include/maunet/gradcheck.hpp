#pragma once

#include <functional>
#include <string>
#include <vector>

#include "maunet/ops.hpp"
#include "maunet/rng.hpp"
#include "maunet/tape.hpp"
#include "maunet/tensor.hpp"

namespace maunet {

// A differentiable scalar-valued program: builds its output on the given tape
// from the (already watched) inputs.
using TensorProgram =
    std::function<Tensor<double>(GradTape<double>&, const std::vector<Tensor<double>>&)>;

struct GradCheckReport {
    struct Coord {
        std::string input;
        std::size_t flat = 0;
        double analytic = 0.0;
        double numeric = 0.0;
        double rel_err = 0.0;
    };

    double max_rel_err = 0.0;
    int checked = 0;
    int skipped_nonsmooth = 0;
    std::vector<Coord> worst;  // up to 5, most offending first

    bool pass(double tol) const { return checked > 0 && max_rel_err <= tol; }
    std::string summary() const;
};

// Compares reverse-mode gradients against central differences
// (f(x+h) - f(x-h)) / 2h on a seeded subsample of input coordinates.
// Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
//
// Coordinates where the slope estimates at step h and h/2 disagree are
// excluded: there the program is not smooth (a ReLU kink or max-pool tie sits
// inside the stencil) and the finite difference does not estimate the
// derivative the backward pass defines.
GradCheckReport gradcheck(const TensorProgram& fn, const std::vector<Tensor<double>>& inputs,
                          const std::vector<std::string>& names, RngState rng, double h = 1e-4,
                          int max_coords_per_input = 48);

}  // namespace maunet
