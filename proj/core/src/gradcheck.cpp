#include "scm/gradcheck.hpp"

#include <cmath>

namespace scm {

namespace {

double evaluate(const TapeProgram& f, const std::vector<Tensor>& inputs) {
    GradientTape tape;
    std::vector<GradientTape::Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
    const GradientTape::Var y = f(tape, vars);
    const double v = tape.value(y).item();
    if (!std::isfinite(v)) throw NumericError("check_gradient: non-finite function value");
    return v;
}

}  // namespace

double check_gradient(const TapeProgram& f, const std::vector<Tensor>& inputs, double step) {
    // analytic gradients, one backward pass
    std::vector<Tensor> analytic;
    {
        GradientTape tape;
        std::vector<GradientTape::Var> vars;
        for (const Tensor& t : inputs) vars.push_back(tape.parameter(t));
        const GradientTape::Var y = f(tape, vars);
        tape.backward(y);
        for (GradientTape::Var v : vars) analytic.push_back(tape.grad(v));
    }

    double worst = 0.0;
    std::vector<Tensor> probe = inputs;
    for (std::size_t t = 0; t < probe.size(); ++t) {
        for (std::int64_t i = 0; i < probe[t].numel(); ++i) {
            const double saved = probe[t][i];
            probe[t][i] = saved + step;
            const double plus = evaluate(f, probe);
            probe[t][i] = saved - step;
            const double minus = evaluate(f, probe);
            probe[t][i] = saved;
            const double fd = (plus - minus) / (2.0 * step);
            const double err = std::abs(analytic[t][i] - fd) / std::max(1.0, std::abs(fd));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

double check_gradient(const std::function<GradientTape::Var(GradientTape&, GradientTape::Var)>& f,
                      const Tensor& x, double step) {
    return check_gradient(
        [&f](GradientTape& tape, const std::vector<GradientTape::Var>& vars) {
            return f(tape, vars[0]);
        },
        {x}, step);
}

}  // namespace scm
