#include "nlpinn/error.hpp"

#include <cstdio>
#include <string>
#include <utility>

namespace nlpinn {

namespace {

std::string short_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

} // namespace

OperatorUnderdetermined::OperatorUnderdetermined(std::size_t p, std::size_t members)
  : NumericalError("operator underdetermined at point " + std::to_string(p) + ": family has " +
                   std::to_string(members) + " members, at least 6 required"),
    point(p) {}

SingularMomentMatrix::SingularMomentMatrix(std::size_t p, double cond)
  : NumericalError("singular moment matrix at point " + std::to_string(p) +
                   " (condition estimate " + short_double(cond) + ")"),
    point(p), condition_estimate(cond) {}

OperatorSetError::OperatorSetError(std::vector<std::size_t> pts, const std::string& first)
  : NumericalError([&] {
        std::string msg = "operator construction failed at " + std::to_string(pts.size()) + " point(s):";
        for (std::size_t i = 0; i < pts.size() && i < 20; ++i) msg += " " + std::to_string(pts[i]);
        if (pts.size() > 20) msg += " ...";
        return msg + " (first: " + first + ")";
    }()),
    points(std::move(pts)) {}

PoisonedGradient::PoisonedGradient(const std::string& cls, const std::string& detail)
  : NumericalError("poisoned gradient: non-finite " + detail + " at " + cls + " node"),
    node_class(cls) {}

ParseError::ParseError(const std::string& file, std::size_t l, const std::string& what)
  : std::runtime_error(file + ":" + std::to_string(l) + ": " + what), line(l) {}

} // namespace nlpinn
