#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace bsgmm {

// One person's repeated measures. Labels are zero-based class indices.
struct Individual {
  std::string id;
  std::vector<double> times;
  std::vector<double> outcomes;
  std::vector<double> covariates;
  std::optional<int> label;
};

struct LongitudinalDataset {
  std::vector<Individual> individuals;
  std::vector<std::string> covariate_names;

  std::size_t size() const { return individuals.size(); }
  std::size_t covariate_count() const { return covariate_names.size(); }
  bool has_labels() const;

  // Smallest and largest observed occasion over all individuals.
  std::pair<double, double> time_range() const;

  // Throws std::invalid_argument naming the first offending individual.
  void validate() const;
};

}  // namespace bsgmm
