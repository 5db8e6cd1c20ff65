#include "bsgmm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace bsgmm {

bool LongitudinalDataset::has_labels() const {
  return !individuals.empty() &&
         std::all_of(individuals.begin(), individuals.end(), [](const Individual& p) { return p.label.has_value(); });
}

std::pair<double, double> LongitudinalDataset::time_range() const {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& p : individuals) {
    for (double t : p.times) {
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
  }
  if (!(lo < hi)) throw std::invalid_argument("dataset needs at least two distinct measurement occasions");
  return {lo, hi};
}

void LongitudinalDataset::validate() const {
  if (individuals.empty()) throw std::invalid_argument("dataset is empty");
  const std::size_t q = covariate_names.size();
  for (const auto& p : individuals) {
    const std::string who = "individual '" + p.id + "': ";
    if (p.times.empty()) throw std::invalid_argument(who + "no observations");
    if (p.times.size() != p.outcomes.size()) throw std::invalid_argument(who + "times and outcomes differ in length");
    for (std::size_t j = 0; j < p.times.size(); ++j) {
      if (!std::isfinite(p.times[j]) || !std::isfinite(p.outcomes[j])) {
        throw std::invalid_argument(who + "non-finite time or outcome");
      }
      if (j > 0 && !(p.times[j] > p.times[j - 1])) {
        throw std::invalid_argument(who + "times must be strictly increasing");
      }
    }
    if (p.covariates.size() != q) throw std::invalid_argument(who + "covariate count differs from the dataset's");
    for (double x : p.covariates) {
      if (!std::isfinite(x)) throw std::invalid_argument(who + "non-finite covariate");
    }
    if (p.label && *p.label < 0) throw std::invalid_argument(who + "negative class label");
  }
}

}  // namespace bsgmm
