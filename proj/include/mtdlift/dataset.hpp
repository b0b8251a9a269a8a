#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mtdlift {

// Dataset-level shape: context width D, treatment categories K, max steps S.
struct Dims {
  std::size_t context = 0;
  std::size_t categories = 0;
  std::size_t steps = 0;

  friend bool operator==(const Dims&, const Dims&) = default;
};

// One adjustment act: category k implemented `timestamp` days after the
// statement release.
struct Act {
  std::size_t category = 0;
  double timestamp = 0.0;
};

// Padded, masked S x K indicator matrix. Rows with mask 0 are padding and
// must be all-zero; every real row carries at least one act.
class TreatmentSeq {
 public:
  TreatmentSeq() = default;
  TreatmentSeq(std::size_t steps, std::size_t categories);

  // One act per step, sorted by time. Sequences longer than `steps` keep the
  // most recent acts.
  static TreatmentSeq from_acts(std::vector<Act> acts, std::size_t steps,
                                std::size_t categories);

  std::size_t steps() const { return steps_; }
  std::size_t categories() const { return categories_; }

  bool at(std::size_t step, std::size_t category) const {
    return matrix_[step * categories_ + category] != 0;
  }
  void set(std::size_t step, std::size_t category, bool value);
  bool masked_in(std::size_t step) const { return mask_[step] != 0; }
  void set_mask(std::size_t step, bool value) { mask_[step] = value ? 1 : 0; }
  double timestamp(std::size_t step) const { return timestamps_[step]; }
  void set_timestamp(std::size_t step, double t) { timestamps_[step] = t; }

  std::span<const std::uint8_t> row(std::size_t step) const {
    return {matrix_.data() + step * categories_, categories_};
  }

  std::size_t active_steps() const;
  bool is_control() const { return active_steps() == 0; }

  // Throws Schema on any broken invariant.
  void validate() const;

  friend bool operator==(const TreatmentSeq&, const TreatmentSeq&) = default;

 private:
  std::size_t steps_ = 0;
  std::size_t categories_ = 0;
  std::vector<std::uint8_t> matrix_;
  std::vector<std::uint8_t> mask_;
  std::vector<double> timestamps_;
};

struct Sample {
  std::string id;
  std::vector<double> context;
  TreatmentSeq treatments;
  int outcome = 0;  // 1 = bankrupt within the horizon
  std::optional<double> true_ite;

  bool treated() const { return !treatments.is_control(); }

  friend bool operator==(const Sample&, const Sample&) = default;
};

class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(Dims dims) : dims_(dims) {}

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const std::vector<Sample>& samples() const { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }

  // Validates shape, outcome, id uniqueness and ground-truth consistency.
  void add(Sample sample);

  bool synthetic() const { return !samples_.empty() && samples_.front().true_ite.has_value(); }
  std::size_t treated_count() const;

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.dims_ == b.dims_ && a.samples_ == b.samples_;
  }

 private:
  Dims dims_;
  std::vector<Sample> samples_;
  std::unordered_set<std::string> ids_;
};

enum class CategoryGroup { Personnel, Information, Other };

std::string_view group_name(CategoryGroup group);
CategoryGroup parse_group(std::string_view name);

// Total mapping from treatment-category index to its group.
class CategoryMap {
 public:
  CategoryMap() = default;
  explicit CategoryMap(std::vector<CategoryGroup> groups) : groups_(std::move(groups)) {}

  // Convention used when no map is supplied: the first 40% of the categories
  // are personnel acts, the next 25% information/business acts, the rest other.
  static CategoryMap default_map(std::size_t categories);
  // {"groups": ["PERSONNEL", "INFORMATION", ...]} with one entry per category.
  static CategoryMap from_json(std::string_view text);
  static CategoryMap load(const std::string& path);
  std::string to_json() const;

  std::size_t size() const { return groups_.size(); }
  CategoryGroup group(std::size_t category) const;

 private:
  std::vector<CategoryGroup> groups_;
};

enum class BinarizeMode { Basic, Personnel, Information, Other };

std::string_view binarize_mode_name(BinarizeMode mode);
BinarizeMode parse_binarize_mode(std::string_view name);

// Scalar T per sample, stored as a K=1, S=1 sequence with timestamp 0.
Dataset binarize(const Dataset& data, BinarizeMode mode, const CategoryMap& map);

// Length-K presence vector per sample, stored as a single step at timestamp 0.
Dataset collapse_multi(const Dataset& data);

struct SplitSpec {
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
};

// Samples are ordered by a seeded hash of their id, so the partition (and the
// order inside each part) does not depend on input order.
std::pair<Dataset, Dataset> split(const Dataset& data, const SplitSpec& spec);
// Same partition as split(), as row indices into `data`.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(const Dataset& data,
                                                                            const SplitSpec& spec);
// Copy of the listed rows, in the listed order.
Dataset subset(const Dataset& data, std::span<const std::size_t> rows);

// Line-oriented text format; see docs/formats.md.
Dataset read_dataset(std::istream& in);
void write_dataset(std::ostream& out, const Dataset& data);
Dataset load_dataset(const std::string& path);
void save_dataset(const std::string& path, const Dataset& data);

// Shortest round-trip decimal rendering used by every text format.
std::string format_double(double value);
double parse_double(std::string_view text);

}  // namespace mtdlift
