#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "mtdlift/dataset.hpp"
#include "mtdlift/metrics.hpp"

namespace mtdlift {

struct Prediction {
  double control = 0.0;  // ŷ(t = 0)
  double treated = 0.0;  // ŷ(t = k_t), the sample's own sequence
  double ite() const { return treated - control; }
};

// Common prediction contract for every estimator.
class UpliftModel {
 public:
  virtual ~UpliftModel() = default;

  virtual std::string kind() const = 0;
  virtual Dims dims() const = 0;
  virtual std::vector<Prediction> predict(const Dataset& data) const = 0;

  std::vector<double> predict_ite(const Dataset& data) const;

  // Checkpoint body written after the common "#mtdlift-checkpoint v1" header.
  virtual void save_body(std::ostream& out) const = 0;
};

void save_model(std::ostream& out, const UpliftModel& model);
void save_model(const std::string& path, const UpliftModel& model);
std::unique_ptr<UpliftModel> load_model(std::istream& in);
std::unique_ptr<UpliftModel> load_model(const std::string& path);

// Pairs predictions with factual arms and outcomes for the metric suite.
std::vector<metrics::ScoredSample> score(const Dataset& data, const std::vector<double>& ite);

}  // namespace mtdlift
