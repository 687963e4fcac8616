#ifndef ENTCLT_CHECK_HPP
#define ENTCLT_CHECK_HPP

#include <json.hpp>

#include <cmath>
#include <optional>
#include <string>

namespace entclt {

/// A measured quantity paired with its theoretical envelope.
struct BoundCheck {
  std::string name;
  double measured = 0.0;
  double envelope = 0.0;
  std::optional<double> fitted_constant;
  bool passed = false;
  bool loose = false;   ///< envelope / measured > 1e3
  bool gating = true;   ///< failures count toward the exit status

  /// Parameter-free comparison with a relative slack of 1e-9, plus an
  /// absolute floor for quadrature noise near zero.
  static BoundCheck make(std::string name, double measured, double envelope, double abs_tol = 0.0) {
    BoundCheck c;
    c.name = std::move(name);
    c.measured = measured;
    c.envelope = envelope;
    c.passed = std::isfinite(envelope) && measured <= envelope * (1.0 + 1e-9) + abs_tol;
    c.loose = measured > 0.0 ? envelope / measured > 1e3 : envelope > 0.0;
    return c;
  }
};

inline nlohmann::json to_json(const BoundCheck& c) {
  nlohmann::json j{{"check_name", c.name}, {"measured", c.measured}, {"envelope", c.envelope},
                   {"passed", c.passed},   {"loose", c.loose},       {"gating", c.gating}};
  if (c.fitted_constant) j["fitted_constant"] = *c.fitted_constant;
  return j;
}

}  // namespace entclt

#endif
