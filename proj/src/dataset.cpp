#include "mtdlift/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "mtdlift/error.hpp"
#include "mtdlift/random.hpp"

namespace mtdlift {

namespace {

std::vector<std::string_view> split_view(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(text.substr(start));
      return parts;
    }
    parts.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

template <typename T>
bool parse_integer(std::string_view text, T& out) {
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

[[noreturn]] void line_error(ErrorKind kind, std::size_t line, const std::string& what) {
  fail(kind, "line " + std::to_string(line) + ": " + what);
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) fail(ErrorKind::Internal, "cannot format number");
  return std::string(buf, ptr);
}

double parse_double(std::string_view text) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty())
    fail(ErrorKind::Parse, "not a number: '" + std::string(text) + "'");
  return value;
}

// --- TreatmentSeq -----------------------------------------------------------

TreatmentSeq::TreatmentSeq(std::size_t steps, std::size_t categories)
    : steps_(steps),
      categories_(categories),
      matrix_(steps * categories, 0),
      mask_(steps, 0),
      timestamps_(steps, 0.0) {}

TreatmentSeq TreatmentSeq::from_acts(std::vector<Act> acts, std::size_t steps,
                                     std::size_t categories) {
  std::stable_sort(acts.begin(), acts.end(),
                   [](const Act& a, const Act& b) { return a.timestamp < b.timestamp; });
  if (acts.size() > steps) acts.erase(acts.begin(), acts.end() - static_cast<std::ptrdiff_t>(steps));
  TreatmentSeq seq(steps, categories);
  for (std::size_t i = 0; i < acts.size(); ++i) {
    if (acts[i].category >= categories)
      fail(ErrorKind::Taxonomy, "act category " + std::to_string(acts[i].category) +
                                    " outside K=" + std::to_string(categories));
    seq.set(i, acts[i].category, true);
    seq.set_mask(i, true);
    seq.set_timestamp(i, acts[i].timestamp);
  }
  return seq;
}

void TreatmentSeq::set(std::size_t step, std::size_t category, bool value) {
  matrix_[step * categories_ + category] = value ? 1 : 0;
}

std::size_t TreatmentSeq::active_steps() const {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}));
}

void TreatmentSeq::validate() const {
  double last = 0.0;
  bool seen = false;
  for (std::size_t s = 0; s < steps_; ++s) {
    const auto r = row(s);
    const bool any = std::any_of(r.begin(), r.end(), [](std::uint8_t v) { return v != 0; });
    if (!masked_in(s)) {
      if (any) fail(ErrorKind::Schema, "padding step " + std::to_string(s) + " carries an act");
      if (timestamps_[s] != 0.0)
        fail(ErrorKind::Schema, "padding step " + std::to_string(s) + " has a timestamp");
      continue;
    }
    if (!any) fail(ErrorKind::Schema, "step " + std::to_string(s) + " has no act");
    const double t = timestamps_[s];
    if (!std::isfinite(t) || t < 0.0)
      fail(ErrorKind::Schema, "step " + std::to_string(s) + " has an invalid timestamp");
    if (seen && t < last)
      fail(ErrorKind::Schema, "timestamps decrease at step " + std::to_string(s));
    last = t;
    seen = true;
  }
}

// --- Dataset ----------------------------------------------------------------

void Dataset::add(Sample sample) {
  if (sample.context.size() != dims_.context)
    fail(ErrorKind::Schema, "sample '" + sample.id + "' has " +
                                std::to_string(sample.context.size()) + " context values, expected " +
                                std::to_string(dims_.context));
  for (double v : sample.context)
    if (!std::isfinite(v)) fail(ErrorKind::Schema, "sample '" + sample.id + "' has a non-finite context value");
  if (sample.outcome != 0 && sample.outcome != 1)
    fail(ErrorKind::Schema, "sample '" + sample.id + "' outcome must be 0 or 1");
  if (sample.treatments.steps() != dims_.steps || sample.treatments.categories() != dims_.categories)
    fail(ErrorKind::Schema, "sample '" + sample.id + "' treatment shape differs from dataset dims");
  sample.treatments.validate();
  if (sample.true_ite && !std::isfinite(*sample.true_ite))
    fail(ErrorKind::Schema, "sample '" + sample.id + "' has a non-finite true_ite");
  if (!samples_.empty() && samples_.front().true_ite.has_value() != sample.true_ite.has_value())
    fail(ErrorKind::Schema, "true_ite must be present on every sample or on none");
  if (sample.id.empty() || sample.id.find_first_of("\t\n\r") != std::string::npos)
    fail(ErrorKind::Schema, "invalid sample id '" + sample.id + "'");
  if (!ids_.insert(sample.id).second) fail(ErrorKind::Schema, "duplicate sample id '" + sample.id + "'");
  samples_.push_back(std::move(sample));
}

std::size_t Dataset::treated_count() const {
  return static_cast<std::size_t>(
      std::count_if(samples_.begin(), samples_.end(), [](const Sample& s) { return s.treated(); }));
}

// --- taxonomy ---------------------------------------------------------------

std::string_view group_name(CategoryGroup group) {
  switch (group) {
    case CategoryGroup::Personnel: return "PERSONNEL";
    case CategoryGroup::Information: return "INFORMATION";
    case CategoryGroup::Other: return "OTHER";
  }
  return "OTHER";
}

CategoryGroup parse_group(std::string_view name) {
  if (name == "PERSONNEL") return CategoryGroup::Personnel;
  if (name == "INFORMATION") return CategoryGroup::Information;
  if (name == "OTHER") return CategoryGroup::Other;
  fail(ErrorKind::Taxonomy, "unknown category group '" + std::string(name) + "'");
}

CategoryMap CategoryMap::default_map(std::size_t categories) {
  const auto personnel = static_cast<std::size_t>(std::ceil(0.4 * static_cast<double>(categories)));
  const auto information = static_cast<std::size_t>(std::ceil(0.25 * static_cast<double>(categories)));
  std::vector<CategoryGroup> groups(categories, CategoryGroup::Other);
  for (std::size_t k = 0; k < categories; ++k) {
    if (k < personnel)
      groups[k] = CategoryGroup::Personnel;
    else if (k < personnel + information)
      groups[k] = CategoryGroup::Information;
  }
  return CategoryMap(std::move(groups));
}

CategoryMap CategoryMap::from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("category map: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("groups") || !doc["groups"].is_array())
    fail(ErrorKind::Taxonomy, "category map needs a 'groups' array");
  std::vector<CategoryGroup> groups;
  for (const auto& g : doc["groups"]) {
    if (!g.is_string()) fail(ErrorKind::Taxonomy, "category map entries must be group names");
    groups.push_back(parse_group(g.get<std::string>()));
  }
  return CategoryMap(std::move(groups));
}

CategoryMap CategoryMap::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open category map '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

std::string CategoryMap::to_json() const {
  nlohmann::json doc;
  doc["groups"] = nlohmann::json::array();
  for (auto g : groups_) doc["groups"].push_back(std::string(group_name(g)));
  return doc.dump();
}

CategoryGroup CategoryMap::group(std::size_t category) const {
  if (category >= groups_.size())
    fail(ErrorKind::Taxonomy, "category " + std::to_string(category) + " is not in the category map (size " +
                                  std::to_string(groups_.size()) + ")");
  return groups_[category];
}

std::string_view binarize_mode_name(BinarizeMode mode) {
  switch (mode) {
    case BinarizeMode::Basic: return "BASIC";
    case BinarizeMode::Personnel: return "PERSONNEL";
    case BinarizeMode::Information: return "INFORMATION";
    case BinarizeMode::Other: return "OTHER";
  }
  return "BASIC";
}

BinarizeMode parse_binarize_mode(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (upper == "BASIC") return BinarizeMode::Basic;
  if (upper == "PERSONNEL") return BinarizeMode::Personnel;
  if (upper == "INFORMATION") return BinarizeMode::Information;
  if (upper == "OTHER") return BinarizeMode::Other;
  fail(ErrorKind::InvalidArgument, "unknown binarize mode '" + std::string(name) + "'");
}

// --- transforms -------------------------------------------------------------

Dataset binarize(const Dataset& data, BinarizeMode mode, const CategoryMap& map) {
  const Dims& dims = data.dims();
  if (dims.categories > 0) (void)map.group(dims.categories - 1);  // totality over K

  std::optional<CategoryGroup> wanted;
  if (mode == BinarizeMode::Personnel) wanted = CategoryGroup::Personnel;
  if (mode == BinarizeMode::Information) wanted = CategoryGroup::Information;
  if (mode == BinarizeMode::Other) wanted = CategoryGroup::Other;

  Dataset out(Dims{dims.context, 1, 1});
  for (const Sample& s : data.samples()) {
    bool t = false;
    for (std::size_t step = 0; step < dims.steps && !t; ++step) {
      if (!s.treatments.masked_in(step)) continue;
      for (std::size_t k = 0; k < dims.categories; ++k) {
        if (!s.treatments.at(step, k)) continue;
        if (!wanted || map.group(k) == *wanted) {
          t = true;
          break;
        }
      }
    }
    Sample b{s.id, s.context, TreatmentSeq(1, 1), s.outcome, s.true_ite};
    if (t) {
      b.treatments.set(0, 0, true);
      b.treatments.set_mask(0, true);
    }
    out.add(std::move(b));
  }
  return out;
}

Dataset collapse_multi(const Dataset& data) {
  const Dims& dims = data.dims();
  Dataset out(Dims{dims.context, dims.categories, 1});
  for (const Sample& s : data.samples()) {
    Sample c{s.id, s.context, TreatmentSeq(1, dims.categories), s.outcome, s.true_ite};
    for (std::size_t step = 0; step < dims.steps; ++step) {
      if (!s.treatments.masked_in(step)) continue;
      for (std::size_t k = 0; k < dims.categories; ++k)
        if (s.treatments.at(step, k)) c.treatments.set(0, k, true);
      c.treatments.set_mask(0, true);
    }
    out.add(std::move(c));
  }
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& data, const SplitSpec& spec) {
  const auto [train_rows, test_rows] = split_indices(data, spec);
  return {subset(data, train_rows), subset(data, test_rows)};
}

Dataset subset(const Dataset& data, std::span<const std::size_t> rows) {
  Dataset out(data.dims());
  for (auto r : rows) out.add(data[r]);
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(const Dataset& data,
                                                                            const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    fail(ErrorKind::InvalidArgument, "train_fraction must lie in (0, 1)");
  const std::size_t n = data.size();
  if (n < 2) fail(ErrorKind::Size, "cannot split a dataset of " + std::to_string(n) + " sample(s)");

  std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
  keyed.reserve(n);
  for (std::size_t i = 0; i < n; ++i) keyed.emplace_back(derive_seed(spec.seed, fnv1a(data[i].id)), i);
  std::sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return data[a.second].id < data[b.second].id;
  });

  auto n_train = static_cast<std::size_t>(std::floor(spec.train_fraction * static_cast<double>(n) + 0.5));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  std::vector<std::size_t> train, test;
  train.reserve(n_train);
  test.reserve(n - n_train);
  for (std::size_t r = 0; r < n; ++r) (r < n_train ? train : test).push_back(keyed[r].second);
  return {std::move(train), std::move(test)};
}

// --- text format ------------------------------------------------------------

Dataset read_dataset(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  Dims dims;
  bool have_header = false;
  Dataset data;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_header) {
      if (line.empty()) continue;
      std::istringstream hs(line);
      std::string magic, version, d, k, s, extra;
      hs >> magic >> version >> d >> k >> s;
      if (magic != "#uplift-mtd" || version != "v1" || d.rfind("D=", 0) != 0 || k.rfind("K=", 0) != 0 ||
          s.rfind("S=", 0) != 0 || (hs >> extra))
        line_error(ErrorKind::Parse, line_no, "expected header '#uplift-mtd v1 D=<d> K=<k> S=<s>'");
      if (!parse_integer(std::string_view(d).substr(2), dims.context) ||
          !parse_integer(std::string_view(k).substr(2), dims.categories) ||
          !parse_integer(std::string_view(s).substr(2), dims.steps))
        line_error(ErrorKind::Parse, line_no, "malformed header dimensions");
      have_header = true;
      data = Dataset(dims);
      continue;
    }
    if (line.empty()) continue;

    const auto fields = split_view(line, '\t');
    if (fields.size() != 5)
      line_error(ErrorKind::Parse, line_no, "expected 5 tab-separated fields, got " + std::to_string(fields.size()));

    Sample sample;
    sample.id = std::string(fields[0]);
    if (fields[1] == "0")
      sample.outcome = 0;
    else if (fields[1] == "1")
      sample.outcome = 1;
    else
      line_error(ErrorKind::Parse, line_no, "outcome must be 0 or 1");

    try {
      if (!fields[2].empty()) sample.true_ite = parse_double(fields[2]);
      if (!fields[3].empty())
        for (auto v : split_view(fields[3], ',')) sample.context.push_back(parse_double(v));
    } catch (const Error& e) {
      line_error(ErrorKind::Parse, line_no, e.what());
    }
    if (sample.context.size() != dims.context)
      line_error(ErrorKind::Schema, line_no, "context has " + std::to_string(sample.context.size()) +
                                                 " values, header says D=" + std::to_string(dims.context));

    sample.treatments = TreatmentSeq(dims.steps, dims.categories);
    if (!fields[4].empty()) {
      for (auto row : split_view(fields[4], ';')) {
        const auto cells = split_view(row, ',');
        if (cells.size() < 3) line_error(ErrorKind::Parse, line_no, "treatment row needs step,timestamp,cat:val");
        std::size_t step = 0;
        if (!parse_integer(cells[0], step)) line_error(ErrorKind::Parse, line_no, "bad step index");
        if (step >= dims.steps)
          line_error(ErrorKind::Schema, line_no, "step " + std::to_string(step) + " exceeds S=" + std::to_string(dims.steps));
        if (sample.treatments.masked_in(step)) line_error(ErrorKind::Parse, line_no, "step listed twice");
        double t = 0.0;
        try {
          t = parse_double(cells[1]);
        } catch (const Error& e) {
          line_error(ErrorKind::Parse, line_no, e.what());
        }
        sample.treatments.set_mask(step, true);
        sample.treatments.set_timestamp(step, t);
        for (std::size_t c = 2; c < cells.size(); ++c) {
          const auto colon = cells[c].find(':');
          std::size_t cat = 0;
          int val = 0;
          if (colon == std::string_view::npos || !parse_integer(cells[c].substr(0, colon), cat) ||
              !parse_integer(cells[c].substr(colon + 1), val) || (val != 0 && val != 1))
            line_error(ErrorKind::Parse, line_no, "treatment entries must be cat:0 or cat:1");
          if (cat >= dims.categories)
            line_error(ErrorKind::Schema, line_no, "category " + std::to_string(cat) + " exceeds K=" +
                                                       std::to_string(dims.categories));
          sample.treatments.set(step, cat, val == 1);
        }
      }
    }
    try {
      data.add(std::move(sample));
    } catch (const Error& e) {
      line_error(e.kind(), line_no, e.what());
    }
  }
  return data;
}

void write_dataset(std::ostream& out, const Dataset& data) {
  const Dims& d = data.dims();
  out << "#uplift-mtd v1 D=" << d.context << " K=" << d.categories << " S=" << d.steps << '\n';
  for (const Sample& s : data.samples()) {
    out << s.id << '\t' << s.outcome << '\t';
    if (s.true_ite) out << format_double(*s.true_ite);
    out << '\t';
    for (std::size_t j = 0; j < s.context.size(); ++j) {
      if (j) out << ',';
      out << format_double(s.context[j]);
    }
    out << '\t';
    bool first_row = true;
    for (std::size_t step = 0; step < d.steps; ++step) {
      if (!s.treatments.masked_in(step)) continue;
      if (!first_row) out << ';';
      first_row = false;
      out << step << ',' << format_double(s.treatments.timestamp(step));
      for (std::size_t k = 0; k < d.categories; ++k)
        if (s.treatments.at(step, k)) out << ',' << k << ":1";
    }
    out << '\n';
  }
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open dataset '" + path + "'");
  return read_dataset(in);
}

void save_dataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write dataset '" + path + "'");
  write_dataset(out, data);
  if (!out) fail(ErrorKind::Io, "write failed for '" + path + "'");
}

}  // namespace mtdlift
