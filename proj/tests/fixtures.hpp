#ifndef ENTCLT_TEST_FIXTURES_HPP
#define ENTCLT_TEST_FIXTURES_HPP

#include "entclt/families.hpp"
#include "entclt/grid.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace fixture {

inline entclt::FamilySpec standardized(const std::string& name,
                                       nlohmann::json params = nlohmann::json::object()) {
  return {name, std::move(params), true, 1.0};
}

/// Seven standardized families covering smooth, jump, skewed and bimodal shapes.
inline std::vector<entclt::FamilySpec> family_matrix() {
  return {
      standardized("gaussian"),
      standardized("uniform"),
      standardized("exponential"),
      standardized("gamma", {{"shape", 3.0}}),
      standardized("beta", {{"a", 2.0}, {"b", 5.0}}),
      standardized("gaussian_mixture", {{"weights", {0.5, 0.5}}, {"means", {-1.5, 1.5}}, {"sds", {0.6, 0.6}}}),
      standardized("triangular", {{"a", -1.0}, {"mode", 0.5}, {"b", 1.0}}),
  };
}

/// Default grid shifted or rescaled so density jumps sit on cell edges.
inline entclt::GridDensity build(const entclt::FamilySpec& spec, const entclt::GridConfig& base = {}) {
  return entclt::materialize(spec, entclt::jump_aligned_grid(spec, base));
}

}  // namespace fixture

namespace entclt {
inline void PrintTo(const FamilySpec& s, std::ostream* os) { *os << family_to_json(s).dump(); }
}  // namespace entclt

#endif
