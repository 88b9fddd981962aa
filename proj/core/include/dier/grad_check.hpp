#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dier/tensor.hpp"

namespace dier {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::int64_t coords_checked = 0;
};

using ScalarFn64 = std::function<Tensor64(const Tensor64&)>;

// Central-difference comparison of the tape's gradient of f at x, done in
// the double-precision evaluation path (f32 finite differences are too
// noisy for tight tolerances). When max_coords > 0, a seeded random subset
// of coordinates is nudged instead of all of them.
GradCheckResult grad_check(const ScalarFn64& f, Tensor64 x, double eps = 1e-5,
                           std::int64_t max_coords = 0, std::uint64_t coord_seed = 0x5eed);

struct OpGradCheck {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Finite-difference sweep over every registered differentiable op, `trials`
// random small inputs each. Used by unit tests, selfcheck and acceptance.
std::vector<OpGradCheck> run_op_grad_checks(std::uint64_t seed, int trials = 20,
                                            double tol = 1e-4);

}  // namespace dier
