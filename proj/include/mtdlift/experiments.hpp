#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtdlift/dataset.hpp"
#include "mtdlift/mtdnet.hpp"
#include "mtdlift/synthgen.hpp"

namespace mtdlift {

struct ExperimentConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double train_fraction = 0.7;
  std::string base_learner = "boosted";
  TrainConfig mtdnet;
  // When set, every MTDnet run is preceded by a grid search on its train split.
  std::optional<SearchGrid> grid;
  double top_fraction = 0.30;
  std::size_t jobs = 1;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& doc);
};

struct MetricRow {
  std::string dataset;  // BASIC / PERSONNEL / ... or "time_sensitive"
  std::string model;
  std::uint64_t seed = 0;
  std::optional<double> uplift_at_k;
  std::string uplift_at_k_reason;
  double auuc = 0.0;
  double qini = 0.0;
  // Spearman of predicted vs true ITE over treated test samples.
  std::optional<double> spearman_treated;
};

struct ExperimentResult {
  std::string name;
  std::vector<std::string> datasets;  // row order
  std::vector<std::string> models;    // column order
  std::vector<MetricRow> rows;        // dataset-major, then model, then seed
  // Extra files (relative path, content), e.g. curves of the first seed.
  std::vector<std::pair<std::string, std::string>> artifacts;

  const MetricRow& at(const std::string& dataset, const std::string& model, std::uint64_t seed) const;

  std::string per_seed_csv() const;
  // dataset,model,metric,mean,stdev,seeds
  std::string summary_csv() const;
  std::string text_table() const;
};

// Four binarizations (BASIC, PERSONNEL, INFORMATION, OTHER) x {S-learner,
// T-learner, MTDnet}. The spec seed is replaced by each run seed.
ExperimentResult run_rq1(const GeneratorSpec& spec, const ExperimentConfig& config);

// Time-sensitive suite x {S-learner-bi, T-learner-bi, MTDnet-multi,
// MTDnet-original}. MTDnet-multi sees the collapsed presence vector without
// timestamps.
ExperimentResult run_rq2(const GeneratorSpec& suite_spec, const ExperimentConfig& config);

// Writes manifest.json, results.csv, summary.csv, table.txt and artifacts
// under <root>/<name>-<hash>, where the hash covers `manifest`. Returns the
// run directory.
std::string write_run(const std::string& root, const ExperimentResult& result, const nlohmann::json& manifest);

}  // namespace mtdlift
