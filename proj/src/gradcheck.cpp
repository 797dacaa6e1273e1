#include "gcnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gcnn {

std::string GradCheckReport::to_string() const {
  std::ostringstream os;
  os << "block\tmax_rel_error\tchecked\tskipped\n";
  for (const auto& b : blocks)
    os << b.name << '\t' << b.max_rel_error << '\t' << b.checked << '\t' << b.skipped << '\n';
  os << "# max_rel_error=" << max_rel_error << " tolerance=" << tolerance
     << (passed ? " PASS" : " FAIL") << '\n';
  return os.str();
}

GradCheckReport finite_difference_check(const LossBuilder& loss,
                                        std::span<Parameter<double>* const> params,
                                        const GradCheckOptions& opts) {
  GradCheckReport report;
  report.tolerance = opts.tolerance;

  for (auto* p : params) p->zero_grad();
  std::uint64_t base_signature = 0;
  {
    Tape<double> tape;
    Var<double> l = loss(tape);
    base_signature = tape.kink_signature();
    tape.backward(l);
  }

  auto evaluate = [&](std::uint64_t& signature) {
    Tape<double> tape;
    Var<double> l = loss(tape);
    signature = tape.kink_signature();
    return l.value()[0];
  };

  for (auto* p : params) {
    GradBlockReport block;
    block.name = p->name;
    const std::size_t n = p->value.size();
    std::vector<std::size_t> coords;
    if (opts.max_per_block == 0 || n <= opts.max_per_block) {
      for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (std::size_t i = 0; i < opts.max_per_block; ++i)
        coords.push_back(i * n / opts.max_per_block);
    }

    double max_diff = 0.0, max_mag = 0.0;
    for (std::size_t i : coords) {
      const double saved = p->value[i];
      double step = opts.step, numeric = 0.0;
      bool clean = false;
      for (std::size_t attempt = 0; attempt <= opts.step_reductions && !clean; ++attempt, step /= 10.0) {
        std::uint64_t sig_plus = 0, sig_minus = 0;
        p->value[i] = saved + step;
        const double f_plus = evaluate(sig_plus);
        p->value[i] = saved - step;
        const double f_minus = evaluate(sig_minus);
        p->value[i] = saved;
        clean = sig_plus == base_signature && sig_minus == base_signature;
        numeric = (f_plus - f_minus) / (2.0 * step);
      }
      if (!clean) {
        ++block.skipped;
        continue;
      }
      const double analytic = p->grad[i];
      max_diff = std::max(max_diff, std::abs(analytic - numeric));
      max_mag = std::max({max_mag, std::abs(analytic), std::abs(numeric)});
      ++block.checked;
    }
    block.max_rel_error = max_diff / std::max(max_mag, opts.magnitude_floor);
    report.max_rel_error = std::max(report.max_rel_error, block.max_rel_error);
    report.blocks.push_back(block);
  }
  report.passed = report.max_rel_error < opts.tolerance;
  for (const auto& b : report.blocks)
    if (b.checked == 0) report.passed = false;
  return report;
}

}  // namespace gcnn
