#include "hfcr/gradcheck.hpp"

#include <cmath>

namespace hfcr {

namespace {

double evaluate(const LossBuilder& f) {
    Graph<double> g(false);
    const double v = f(g).value().item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss during finite differencing");
    return v;
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& f, const std::vector<Parameter<double>*>& params, double eps) {
    if (!(eps >= 1e-6 && eps <= 1e-3)) throw std::invalid_argument("grad_check: eps must lie in [1e-6, 1e-3]");

    for (auto* p : params) p->zero_grad();
    {
        Graph<double> g;
        Var<double> loss = f(g);
        if (!std::isfinite(loss.value().item())) throw NumericError("grad_check: non-finite loss");
        // A loss that touches no parameter has an identically zero gradient.
        if (g.requires_grad(loss)) g.backward(loss);
    }

    GradCheckResult result;
    for (auto* p : params) {
        double worst = 0.0;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double orig = p->value[i];
            p->value[i] = orig + eps;
            const double up = evaluate(f);
            p->value[i] = orig - eps;
            const double down = evaluate(f);
            p->value[i] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = p->grad[i];
            const double err = std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
            worst = std::max(worst, err);
            if (result.checked == 0 || err > result.max_rel_error) {
                result.max_rel_error = err;
                result.worst_parameter = p->name;
                result.worst_index = i;
            }
            ++result.checked;
        }
        result.per_parameter.emplace_back(p->name, worst);
    }
    return result;
}

double grad_check(const std::function<Var<double>(Graph<double>&, const Var<double>&)>& f, const Tensor<double>& x,
                  double eps) {
    Parameter<double> p("x", x);
    LossBuilder builder = [&](Graph<double>& g) { return f(g, g.parameter(p)); };
    return grad_check(builder, {&p}, eps).max_rel_error;
}

}  // namespace hfcr
