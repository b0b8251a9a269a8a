#include "mtdlift/experiments.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <thread>

#include "mtdlift/baselines.hpp"
#include "mtdlift/error.hpp"
#include "mtdlift/metrics.hpp"
#include "mtdlift/random.hpp"

namespace mtdlift {

namespace fs = std::filesystem;

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json doc = {{"seeds", seeds},
                        {"train_fraction", train_fraction},
                        {"base_learner", base_learner},
                        {"mtdnet", mtdnet.to_json()},
                        {"top_fraction", top_fraction},
                        {"jobs", jobs}};
  doc["grid"] = grid ? grid->to_json() : nlohmann::json(nullptr);
  return doc;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) fail(ErrorKind::Parse, "experiment config must be a JSON object");
  ExperimentConfig c;
  try {
    for (const auto& [key, v] : doc.items()) {
      if (key == "seeds") c.seeds = v.get<std::vector<std::uint64_t>>();
      else if (key == "train_fraction") c.train_fraction = v.get<double>();
      else if (key == "base_learner") c.base_learner = v.get<std::string>();
      else if (key == "mtdnet") c.mtdnet = TrainConfig::from_json(v);
      else if (key == "top_fraction") c.top_fraction = v.get<double>();
      else if (key == "jobs") c.jobs = v.get<std::size_t>();
      else if (key == "grid") {
        if (v.is_null()) c.grid.reset();
        else c.grid = SearchGrid::from_json(v);
      } else {
        fail(ErrorKind::Schema, "experiment config: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("experiment config: ") + e.what());
  }
  if (c.seeds.empty()) fail(ErrorKind::InvalidArgument, "experiment config: seeds must not be empty");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0))
    fail(ErrorKind::InvalidArgument, "experiment config: train_fraction must lie in (0, 1)");
  if (!(c.top_fraction > 0.0 && c.top_fraction <= 1.0))
    fail(ErrorKind::InvalidArgument, "experiment config: top_fraction must lie in (0, 1]");
  make_base_learner(c.base_learner);
  return c;
}

const MetricRow& ExperimentResult::at(const std::string& dataset, const std::string& model,
                                      std::uint64_t seed) const {
  for (const auto& r : rows)
    if (r.dataset == dataset && r.model == model && r.seed == seed) return r;
  fail(ErrorKind::InvalidArgument, "no result row for " + dataset + "/" + model + "/" + std::to_string(seed));
}

namespace {

std::string optional_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

struct Stats {
  double mean = 0.0, stdev = 0.0;
  std::size_t count = 0;
};

Stats stats(const std::vector<double>& v) {
  Stats s;
  s.count = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stdev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

using MetricGetter = std::function<std::optional<double>(const MetricRow&)>;

const std::vector<std::pair<std::string, MetricGetter>>& metric_columns() {
  static const std::vector<std::pair<std::string, MetricGetter>> cols = {
      {"uplift_at_k", [](const MetricRow& r) { return r.uplift_at_k; }},
      {"auuc", [](const MetricRow& r) { return std::optional<double>(r.auuc); }},
      {"qini", [](const MetricRow& r) { return std::optional<double>(r.qini); }},
      {"spearman_treated", [](const MetricRow& r) { return r.spearman_treated; }},
  };
  return cols;
}

std::vector<double> collect(const ExperimentResult& res, const std::string& dataset, const std::string& model,
                            const MetricGetter& get) {
  std::vector<double> out;
  for (const auto& r : res.rows)
    if (r.dataset == dataset && r.model == model)
      if (auto v = get(r)) out.push_back(*v);
  return out;
}

}  // namespace

std::string ExperimentResult::per_seed_csv() const {
  std::ostringstream out;
  out << "dataset,model,seed,uplift_at_k,auuc,qini,spearman_treated,note\n";
  for (const auto& r : rows)
    out << r.dataset << ',' << r.model << ',' << r.seed << ',' << optional_cell(r.uplift_at_k) << ','
        << format_double(r.auuc) << ',' << format_double(r.qini) << ',' << optional_cell(r.spearman_treated) << ','
        << r.uplift_at_k_reason << '\n';
  return out.str();
}

std::string ExperimentResult::summary_csv() const {
  std::ostringstream out;
  out << "dataset,model,metric,mean,stdev,seeds\n";
  for (const auto& d : datasets)
    for (const auto& m : models)
      for (const auto& [metric, get] : metric_columns()) {
        const Stats s = stats(collect(*this, d, m, get));
        if (s.count == 0) continue;
        out << d << ',' << m << ',' << metric << ',' << format_double(s.mean) << ',' << format_double(s.stdev) << ','
            << s.count << '\n';
      }
  return out.str();
}

std::string ExperimentResult::text_table() const {
  std::ostringstream out;
  out << name << ": mean +- stdev over seeds\n";
  for (const auto& d : datasets) {
    out << '\n' << d << '\n';
    out << std::left << std::setw(18) << "model";
    for (const auto& [metric, get] : metric_columns()) out << std::setw(22) << metric;
    out << '\n';
    for (const auto& m : models) {
      out << std::setw(18) << m;
      for (const auto& [metric, get] : metric_columns()) {
        const Stats s = stats(collect(*this, d, m, get));
        char cell[64];
        if (s.count == 0)
          std::snprintf(cell, sizeof cell, "n/a");
        else
          std::snprintf(cell, sizeof cell, "%.4f +- %.4f", s.mean, s.stdev);
        out << std::setw(22) << cell;
      }
      out << '\n';
    }
  }
  if (name == "rq2") out << "\nCEVAE, DragonNet, GANITE: not reimplemented\n";
  return out.str();
}

namespace {

// One (dataset view, model) unit of work for one seed.
struct Task {
  std::size_t seed_index = 0;
  std::size_t dataset_index = 0;
  std::size_t model_index = 0;
};

struct SplitData {
  Dataset train, test;
};

using ModelRunner = std::function<std::vector<double>(const SplitData& view, std::uint64_t seed)>;
// (seed index, dataset index, model index) -> the split that model trains on.
using ViewSelector = std::function<const SplitData&(std::size_t, std::size_t, std::size_t)>;

TrainConfig seeded(TrainConfig c, std::uint64_t seed, const std::string& tag) {
  c.seed = derive_seed(seed, tag);
  return c;
}

MetricRow evaluate_row(const Dataset& test, const std::vector<double>& ite, double top_fraction) {
  MetricRow row;
  const auto scored = score(test, ite);
  const auto at_k = metrics::uplift_at_k(scored, top_fraction);
  row.uplift_at_k = at_k.value;
  row.uplift_at_k_reason = at_k.reason;
  row.auuc = metrics::auuc(scored);
  row.qini = metrics::qini_score(scored);
  if (test.synthetic()) {
    std::vector<double> pred, truth;
    for (std::size_t i = 0; i < test.size(); ++i)
      if (test[i].treated()) {
        pred.push_back(ite[i]);
        truth.push_back(*test[i].true_ite);
      }
    if (pred.size() >= 3) row.spearman_treated = metrics::spearman(pred, truth);
  }
  return row;
}

void run_tasks(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& body) {
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(count, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

ExperimentResult run_grid(const std::string& name, const std::vector<std::string>& datasets,
                          const std::vector<std::string>& models, const ViewSelector& view_for,
                          const std::vector<ModelRunner>& runners, const ExperimentConfig& config) {
  ExperimentResult result;
  result.name = name;
  result.datasets = datasets;
  result.models = models;
  std::vector<Task> tasks;
  for (std::size_t d = 0; d < datasets.size(); ++d)
    for (std::size_t m = 0; m < models.size(); ++m)
      for (std::size_t s = 0; s < config.seeds.size(); ++s) tasks.push_back({s, d, m});
  result.rows.resize(tasks.size());
  std::vector<std::vector<double>> predictions(tasks.size());

  run_tasks(tasks.size(), config.jobs, [&](std::size_t i) {
    const Task& t = tasks[i];
    const SplitData& view = view_for(t.seed_index, t.dataset_index, t.model_index);
    const std::uint64_t seed = config.seeds[t.seed_index];
    predictions[i] = runners[t.model_index](view, derive_seed(seed, datasets[t.dataset_index]));
    MetricRow row = evaluate_row(view.test, predictions[i], config.top_fraction);
    row.dataset = datasets[t.dataset_index];
    row.model = models[t.model_index];
    row.seed = seed;
    result.rows[i] = std::move(row);
  });

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const Task& t = tasks[i];
    if (t.seed_index != 0) continue;
    const auto scored = score(view_for(0, t.dataset_index, t.model_index).test, predictions[i]);
    const std::string stem = "curves/" + datasets[t.dataset_index] + "_" + models[t.model_index];
    result.artifacts.emplace_back(stem + "_qini.csv", metrics::curve_csv(metrics::qini_curve(scored)));
    result.artifacts.emplace_back(stem + "_uplift.csv", metrics::curve_csv(metrics::uplift_curve(scored)));
  }
  return result;
}

ModelRunner s_runner(const std::string& learner) {
  return [learner](const SplitData& view, std::uint64_t) {
    return fit_s_learner(view.train, *make_base_learner(learner)).predict_ite(view.test);
  };
}

ModelRunner t_runner(const std::string& learner) {
  return [learner](const SplitData& view, std::uint64_t) {
    return fit_t_learner(view.train, *make_base_learner(learner)).predict_ite(view.test);
  };
}

ModelRunner mtdnet_runner(const TrainConfig& base, const std::optional<SearchGrid>& grid, const std::string& tag) {
  return [base, grid, tag](const SplitData& view, std::uint64_t seed) {
    TrainConfig cfg = seeded(base, seed, tag);
    if (grid) {
      const auto result = grid_search(view.train, *grid, cfg, 1);
      cfg = result.configs[result.best];
    }
    MtdNet model(view.train.dims(), cfg);
    train(model, view.train);
    return model.predict_ite(view.test);
  };
}

}  // namespace

ExperimentResult run_rq1(const GeneratorSpec& spec, const ExperimentConfig& config) {
  const std::vector<BinarizeMode> modes{BinarizeMode::Basic, BinarizeMode::Personnel, BinarizeMode::Information,
                                        BinarizeMode::Other};
  std::vector<std::string> datasets;
  for (auto m : modes) datasets.emplace_back(binarize_mode_name(m));
  const CategoryMap map = CategoryMap::default_map(spec.k);

  std::vector<std::vector<SplitData>> views(config.seeds.size());
  run_tasks(config.seeds.size(), config.jobs, [&](std::size_t s) {
    GeneratorSpec g = spec;
    g.seed = config.seeds[s];
    const Dataset data = generate(g);
    auto [train, test] = split(data, SplitSpec{config.train_fraction, derive_seed(g.seed, "split")});
    for (auto m : modes) views[s].push_back({binarize(train, m, map), binarize(test, m, map)});
  });

  const std::vector<std::string> models{"S-learner", "T-learner", "MTDnet"};
  const std::vector<ModelRunner> runners{s_runner(config.base_learner), t_runner(config.base_learner),
                                         mtdnet_runner(config.mtdnet, config.grid, "mtdnet")};
  const ViewSelector view_for = [&](std::size_t s, std::size_t d, std::size_t) -> const SplitData& {
    return views[s][d];
  };
  return run_grid("rq1", datasets, models, view_for, runners, config);
}

ExperimentResult run_rq2(const GeneratorSpec& suite_spec, const ExperimentConfig& config) {
  const std::vector<std::string> models{"S-learner-bi", "T-learner-bi", "MTDnet-multi", "MTDnet-original"};
  const std::string dataset = suite_spec.label.empty() ? "suite" : suite_spec.label;
  const CategoryMap map = CategoryMap::default_map(suite_spec.k);

  // Per seed: [0] original, [1] binarized, [2] collapsed.
  std::vector<std::vector<SplitData>> all(config.seeds.size());
  run_tasks(config.seeds.size(), config.jobs, [&](std::size_t s) {
    GeneratorSpec g = suite_spec;
    g.seed = config.seeds[s];
    const Dataset data = generate(g);
    auto [train, test] = split(data, SplitSpec{config.train_fraction, derive_seed(g.seed, "split")});
    all[s].push_back({binarize(train, BinarizeMode::Basic, map), binarize(test, BinarizeMode::Basic, map)});
    all[s].push_back({collapse_multi(train), collapse_multi(test)});
    all[s].push_back({std::move(train), std::move(test)});
  });

  TrainConfig blind = config.mtdnet;
  blind.use_timestamps = false;
  const std::vector<ModelRunner> runners{s_runner(config.base_learner), t_runner(config.base_learner),
                                         mtdnet_runner(blind, config.grid, "mtdnet-multi"),
                                         mtdnet_runner(config.mtdnet, config.grid, "mtdnet-original")};
  // Binarized rows read view 0, the timing-blind ablation view 1, MTDnet-original view 2.
  const std::array<std::size_t, 4> view_of_model{0, 0, 1, 2};
  const ViewSelector view_for = [&](std::size_t s, std::size_t, std::size_t m) -> const SplitData& {
    return all[s][view_of_model[m]];
  };
  return run_grid("rq2", {dataset}, models, view_for, runners, config);
}

std::string write_run(const std::string& root, const ExperimentResult& result, const nlohmann::json& manifest) {
  const std::string text = manifest.dump(2);
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  const fs::path dir = fs::path(root) / (result.name + "-" + hash);
  std::error_code ec;
  fs::create_directories(dir / "curves", ec);
  if (ec) fail(ErrorKind::Io, "cannot create run directory '" + dir.string() + "': " + ec.message());
  auto put = [&](const fs::path& rel, const std::string& content) {
    const fs::path path = dir / rel;
    fs::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
    out << content;
    if (!out) fail(ErrorKind::Io, "write failed for '" + path.string() + "'");
  };
  put("manifest.json", text + "\n");
  put("results.csv", result.per_seed_csv());
  put("summary.csv", result.summary_csv());
  put("table.txt", result.text_table());
  for (const auto& [rel, content] : result.artifacts) put(rel, content);
  return dir.string();
}

}  // namespace mtdlift
