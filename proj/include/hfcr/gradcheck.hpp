#pragma once

#include "hfcr/autograd.hpp"

#include <functional>
#include <string>
#include <vector>

namespace hfcr {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    /// Largest error seen per parameter name, in the order parameters were given.
    std::vector<std::pair<std::string, double>> per_parameter;
};

/// Builds a scalar loss on a fresh graph from the current parameter values.
using LossBuilder = std::function<Var<double>(Graph<double>&)>;

/// Compares reverse-mode gradients against central differences for every
/// element of every listed parameter. Relative error per element is
/// |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
GradCheckResult grad_check(const LossBuilder& f, const std::vector<Parameter<double>*>& params, double eps);

/// Single-tensor form: f receives x as a parameter node.
double grad_check(const std::function<Var<double>(Graph<double>&, const Var<double>&)>& f, const Tensor<double>& x,
                  double eps);

}  // namespace hfcr
