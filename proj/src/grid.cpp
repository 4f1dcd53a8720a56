#include "fluvinv/grid.hpp"

#include <cmath>
#include <stdexcept>

namespace fluvinv {

void ModelGrid::validate() const {
  const Shape want = geometry.shape();
  if (coarse_fraction.shape() != want || depo_time.shape() != want)
    throw std::domain_error("grid: channel extents " + shape_str(coarse_fraction.shape()) + " / " +
                            shape_str(depo_time.shape()) + " do not match geometry " +
                            shape_str(want));
  auto check = [](const Tensor& t, const char* name) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double v = t[i];
      if (!(v >= 0.0 && v <= 1.0))
        throw std::domain_error(std::string("grid: ") + name + " value " + std::to_string(v) +
                                " at cell " + std::to_string(i) + " outside [0, 1]");
    }
  };
  check(coarse_fraction, "coarse_fraction");
  check(depo_time, "depo_time");
}

const std::vector<std::string>& standard_label_names() {
  static const std::vector<std::string> names = {"coarse_grain_diameter", "fine_grain_diameter",
                                                 "bank_erodibility", "aggradation_rate",
                                                 "storm_rainfall"};
  return names;
}

LabelVector neutral_labels(std::size_t k) {
  LabelVector l;
  l.values.assign(k, 0.5);
  const auto& std_names = standard_label_names();
  for (std::size_t i = 0; i < k; ++i)
    l.names.push_back(i < std_names.size() ? std_names[i] : "label" + std::to_string(i));
  return l;
}

void validate_labels(const LabelVector& labels, std::size_t expected) {
  if (labels.size() != expected)
    throw std::invalid_argument("labels: expected " + std::to_string(expected) + " values, got " +
                                std::to_string(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double v = labels.values[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw std::invalid_argument("labels: value " + std::to_string(v) + " of label " +
                                  std::to_string(i) + " outside [0, 1]");
  }
}

}  // namespace fluvinv
