#include "maunet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace maunet {

namespace {

double eval_at(const TensorProgram& fn, const std::vector<Tensor<double>>& inputs,
               std::size_t which, std::size_t flat, double value) {
    std::vector<Tensor<double>> probe = inputs;
    std::vector<double> data(probe[which].values());
    data[flat] = value;
    probe[which] = Tensor<double>(probe[which].shape(), std::move(data));

    GradTape<double> tape;
    std::vector<Tensor<double>> watched;
    watched.reserve(probe.size());
    for (const auto& t : probe) watched.push_back(tape.watch(t));
    Tensor<double> out = fn(tape, watched);
    if (out.size() != 1) {
        throw UsageError("gradcheck: program output must be scalar, got " +
                         shape_str(out.shape()));
    }
    return out[0];
}

}  // namespace

std::string GradCheckReport::summary() const {
    std::ostringstream os;
    os << "max rel err " << max_rel_err << " over " << checked << " coordinates";
    if (skipped_nonsmooth > 0) os << " (" << skipped_nonsmooth << " non-smooth skipped)";
    for (const auto& c : worst) {
        os << "\n  " << c.input << "[" << c.flat << "]: analytic " << c.analytic << " numeric "
           << c.numeric << " rel " << c.rel_err;
    }
    return os.str();
}

GradCheckReport gradcheck(const TensorProgram& fn, const std::vector<Tensor<double>>& inputs,
                          const std::vector<std::string>& names, RngState rng, double h,
                          int max_coords_per_input) {
    GradTape<double> tape;
    std::vector<Tensor<double>> watched;
    watched.reserve(inputs.size());
    for (const auto& t : inputs) watched.push_back(tape.watch(t));
    Tensor<double> loss = fn(tape, watched);
    if (loss.size() != 1) {
        throw UsageError("gradcheck: program output must be scalar, got " +
                         shape_str(loss.shape()));
    }
    auto grads = tape.backward(tape.node_of(loss));

    GradCheckReport report;
    for (std::size_t which = 0; which < inputs.size(); ++which) {
        const Tensor<double> analytic =
            grads.get_or_zero(tape.node_of(watched[which]), inputs[which].shape());
        const std::string name =
            which < names.size() ? names[which] : "input" + std::to_string(which);

        // seeded coordinate subsample (all coordinates when small enough)
        const std::size_t n = inputs[which].size();
        std::vector<std::size_t> coords;
        if (n <= static_cast<std::size_t>(max_coords_per_input)) {
            coords.resize(n);
            for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            std::vector<std::size_t> all(n);
            for (std::size_t i = 0; i < n; ++i) all[i] = i;
            for (int k = 0; k < max_coords_per_input; ++k) {
                const std::size_t j =
                    static_cast<std::size_t>(k) + rng.next_below(n - static_cast<std::size_t>(k));
                std::swap(all[static_cast<std::size_t>(k)], all[j]);
                coords.push_back(all[static_cast<std::size_t>(k)]);
            }
        }

        for (std::size_t flat : coords) {
            const double x0 = inputs[which][flat];
            const double fp = eval_at(fn, inputs, which, flat, x0 + h);
            const double fm = eval_at(fn, inputs, which, flat, x0 - h);
            const double d_h = (fp - fm) / (2.0 * h);
            const double fp2 = eval_at(fn, inputs, which, flat, x0 + h / 2.0);
            const double fm2 = eval_at(fn, inputs, which, flat, x0 - h / 2.0);
            const double d_h2 = (fp2 - fm2) / h;

            // both step sizes must see the same slope, otherwise a kink sits
            // inside the stencil
            const double agree_scale = std::max({std::fabs(d_h), std::fabs(d_h2), 1.0});
            if (std::fabs(d_h - d_h2) > 1e-3 * agree_scale) {
                ++report.skipped_nonsmooth;
                continue;
            }

            const double a = analytic[flat];
            // resolution of the central difference itself: function rounding
            // of order |f|*eps turns into |f|*eps/h slope noise, so smaller
            // disagreements carry no signal
            const double fd_noise = 32.0 * 2.220446049250313e-16 *
                                    std::max({std::fabs(fp), std::fabs(fm), 1.0}) / h;
            const double denom = std::max({std::fabs(a), std::fabs(d_h), 1e-8});
            const double rel = std::fabs(a - d_h) <= fd_noise ? 0.0 : std::fabs(a - d_h) / denom;
            ++report.checked;
            if (rel > report.max_rel_err) report.max_rel_err = rel;

            if (report.worst.size() < 5 || rel > report.worst.back().rel_err) {
                report.worst.push_back({name, flat, a, d_h, rel});
                std::sort(report.worst.begin(), report.worst.end(),
                          [](const auto& l, const auto& r) { return l.rel_err > r.rel_err; });
                if (report.worst.size() > 5) report.worst.resize(5);
            }
        }
    }
    return report;
}

}  // namespace maunet
