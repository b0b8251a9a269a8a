#include "mtdlift/mtdlift.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include "mtdlift/baselines.hpp"
#include "mtdlift/dataset.hpp"
#include "mtdlift/error.hpp"
#include "mtdlift/experiments.hpp"
#include "mtdlift/metrics.hpp"
#include "mtdlift/model.hpp"
#include "mtdlift/mtdnet.hpp"
#include "mtdlift/synthgen.hpp"

struct mtdl_dataset {
  mtdlift::Dataset data;
};

struct mtdl_model {
  std::unique_ptr<mtdlift::UpliftModel> model;
  std::string kind;
};

namespace {

using namespace mtdlift;

constexpr const char* kVersion = "0.1.0";

thread_local std::string last_error;

mtdl_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return MTDL_ERR_INVALID_ARGUMENT;
    case ErrorKind::Parse: return MTDL_ERR_PARSE;
    case ErrorKind::Schema: return MTDL_ERR_SCHEMA;
    case ErrorKind::Taxonomy: return MTDL_ERR_TAXONOMY;
    case ErrorKind::Size: return MTDL_ERR_SIZE;
    case ErrorKind::Calibration: return MTDL_ERR_CALIBRATION;
    case ErrorKind::Numeric: return MTDL_ERR_NUMERIC;
    case ErrorKind::Training: return MTDL_ERR_TRAINING;
    case ErrorKind::Degenerate: return MTDL_ERR_DEGENERATE;
    case ErrorKind::Io: return MTDL_ERR_IO;
    case ErrorKind::Internal: return MTDL_ERR_INTERNAL;
  }
  return MTDL_ERR_INTERNAL;
}

template <typename F>
mtdl_status guarded(F&& body) {
  last_error.clear();
  try {
    body();
    return MTDL_OK;
  } catch (const Error& e) {
    last_error = e.what();
    return status_of(e.kind());
  } catch (const nlohmann::json::exception& e) {
    last_error = e.what();
    return MTDL_ERR_PARSE;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return MTDL_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return MTDL_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown failure";
    return MTDL_ERR_INTERNAL;
  }
}

void require(const void* p, const char* name) {
  if (!p) fail(ErrorKind::InvalidArgument, std::string(name) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void set_string(char** out, const std::string& s) {
  if (out) *out = dup_string(s);
}

nlohmann::json parse_json(const char* text, const char* what) {
  if (!text || !*text) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string(what) + ": " + e.what());
  }
}

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

std::vector<metrics::ScoredSample> scored_from(const double* scores, const int* treated, const int* outcomes,
                                               size_t n) {
  if (n > 0) {
    require(scores, "scores");
    require(treated, "treated");
    require(outcomes, "outcomes");
  }
  std::vector<metrics::ScoredSample> out(n);
  for (size_t i = 0; i < n; ++i) {
    if (!std::isfinite(scores[i])) fail(ErrorKind::InvalidArgument, "score " + std::to_string(i) + " is not finite");
    if (outcomes[i] != 0 && outcomes[i] != 1)
      fail(ErrorKind::InvalidArgument, "outcome " + std::to_string(i) + " must be 0 or 1");
    out[i] = {scores[i], treated[i] ? metrics::Arm::Treated : metrics::Arm::Control, outcomes[i]};
  }
  return out;
}

}  // namespace

extern "C" {

const char* mtdl_version(void) { return kVersion; }

const char* mtdl_last_error(void) { return last_error.c_str(); }

const char* mtdl_status_name(mtdl_status status) {
  switch (status) {
    case MTDL_OK: return "ok";
    case MTDL_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case MTDL_ERR_PARSE: return "parse";
    case MTDL_ERR_SCHEMA: return "schema";
    case MTDL_ERR_TAXONOMY: return "taxonomy";
    case MTDL_ERR_SIZE: return "size";
    case MTDL_ERR_CALIBRATION: return "calibration";
    case MTDL_ERR_NUMERIC: return "numeric";
    case MTDL_ERR_TRAINING: return "training";
    case MTDL_ERR_DEGENERATE: return "degenerate";
    case MTDL_ERR_IO: return "io";
    case MTDL_ERR_INTERNAL: return "internal";
  }
  return "internal";
}

void mtdl_string_free(char* text) { std::free(text); }

// --- datasets -----------------------------------------------------------------------

mtdl_status mtdl_dataset_load(const char* path, mtdl_dataset** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new mtdl_dataset{load_dataset(path)};
  });
}

mtdl_status mtdl_dataset_save(const mtdl_dataset* data, const char* path) {
  return guarded([&] {
    require(data, "data");
    require(path, "path");
    save_dataset(path, data->data);
  });
}

void mtdl_dataset_free(mtdl_dataset* data) { delete data; }

size_t mtdl_dataset_size(const mtdl_dataset* data) { return data ? data->data.size() : 0; }

mtdl_status mtdl_dataset_dims(const mtdl_dataset* data, size_t* context, size_t* categories, size_t* steps) {
  return guarded([&] {
    require(data, "data");
    const Dims& d = data->data.dims();
    if (context) *context = d.context;
    if (categories) *categories = d.categories;
    if (steps) *steps = d.steps;
  });
}

mtdl_status mtdl_dataset_sample(const mtdl_dataset* data, size_t index, const char** id, int* treated, int* outcome,
                                int* has_true_ite, double* true_ite) {
  return guarded([&] {
    require(data, "data");
    if (index >= data->data.size()) fail(ErrorKind::InvalidArgument, "sample index out of range");
    const Sample& s = data->data[index];
    if (id) *id = s.id.c_str();
    if (treated) *treated = s.treated() ? 1 : 0;
    if (outcome) *outcome = s.outcome;
    if (has_true_ite) *has_true_ite = s.true_ite ? 1 : 0;
    if (true_ite) *true_ite = s.true_ite.value_or(0.0);
  });
}

mtdl_status mtdl_preset_spec(const char* name, char** spec_json) {
  return guarded([&] {
    require(name, "name");
    require(spec_json, "spec_json");
    *spec_json = dup_string(preset_spec(name).to_json().dump(2));
  });
}

mtdl_status mtdl_dataset_generate(const char* spec_json, mtdl_dataset** out, char** report_json) {
  return guarded([&] {
    require(spec_json, "spec_json");
    require(out, "out");
    const GeneratorSpec spec = GeneratorSpec::from_json(parse_json(spec_json, "generator spec"));
    Generated g = generate_with_report(spec);
    if (report_json) {
      nlohmann::json report = {{"spec", g.spec.to_json()},
                               {"calibrated", g.calibration.calibrated},
                               {"expected",
                                {{"treated_fraction", g.calibration.expected.treated_fraction},
                                 {"control_positive_rate", g.calibration.expected.control_positive_rate},
                                 {"treated_positive_rate", g.calibration.expected.treated_positive_rate}}}};
      *report_json = dup_string(report.dump(2));
    }
    *out = new mtdl_dataset{std::move(g.data)};
  });
}

mtdl_status mtdl_dataset_binarize(const mtdl_dataset* data, const char* mode, const char* category_map_json,
                                  mtdl_dataset** out) {
  return guarded([&] {
    require(data, "data");
    require(mode, "mode");
    require(out, "out");
    const BinarizeMode m = parse_binarize_mode(upper(mode));
    const CategoryMap map = category_map_json ? CategoryMap::from_json(category_map_json)
                                              : CategoryMap::default_map(data->data.dims().categories);
    *out = new mtdl_dataset{binarize(data->data, m, map)};
  });
}

mtdl_status mtdl_dataset_collapse(const mtdl_dataset* data, mtdl_dataset** out) {
  return guarded([&] {
    require(data, "data");
    require(out, "out");
    *out = new mtdl_dataset{collapse_multi(data->data)};
  });
}

mtdl_status mtdl_dataset_split(const mtdl_dataset* data, double train_fraction, uint64_t seed, mtdl_dataset** train,
                               mtdl_dataset** test) {
  return guarded([&] {
    require(data, "data");
    require(train, "train");
    require(test, "test");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
      fail(ErrorKind::InvalidArgument, "train_fraction must lie in (0, 1)");
    auto [a, b] = split(data->data, SplitSpec{train_fraction, seed});
    auto left = std::make_unique<mtdl_dataset>(mtdl_dataset{std::move(a)});
    *test = new mtdl_dataset{std::move(b)};
    *train = left.release();
  });
}

// --- models ------------------------------------------------------------------------

mtdl_status mtdl_model_train(const mtdl_dataset* train_set, const char* kind, const char* config_json,
                             mtdl_model** out, char** log) {
  return guarded([&] {
    require(train_set, "train");
    require(kind, "kind");
    require(out, "out");
    const std::string k = kind;
    const nlohmann::json cfg = parse_json(config_json, "model config");
    auto handle = std::make_unique<mtdl_model>();
    std::string history;
    if (k == "slearner" || k == "tlearner") {
      std::string learner = "logistic";
      for (const auto& [key, v] : cfg.items()) {
        if (key == "base_learner") learner = v.get<std::string>();
        else fail(ErrorKind::Schema, "meta-learner config: unknown key '" + key + "'");
      }
      const auto prototype = make_base_learner(learner);
      if (k == "slearner")
        handle->model = std::make_unique<SLearner>(fit_s_learner(train_set->data, *prototype));
      else
        handle->model = std::make_unique<TLearner>(fit_t_learner(train_set->data, *prototype));
    } else if (k == "mtdnet") {
      auto model = std::make_unique<MtdNet>(train_set->data.dims(), TrainConfig::from_json(cfg));
      history = train(*model, train_set->data).metrics_log();
      handle->model = std::move(model);
    } else if (k == "neural-tlearner") {
      handle->model =
          std::make_unique<NeuralTLearner>(train_neural_t_learner(train_set->data, TrainConfig::from_json(cfg)));
    } else {
      fail(ErrorKind::InvalidArgument, "unknown model kind '" + k + "'");
    }
    handle->kind = handle->model->kind();
    set_string(log, history);
    *out = handle.release();
  });
}

mtdl_status mtdl_model_save(const mtdl_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    save_model(std::string(path), *model->model);
  });
}

mtdl_status mtdl_model_load(const char* path, mtdl_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    auto handle = std::make_unique<mtdl_model>();
    handle->model = load_model(std::string(path));
    handle->kind = handle->model->kind();
    *out = handle.release();
  });
}

void mtdl_model_free(mtdl_model* model) { delete model; }

const char* mtdl_model_kind(const mtdl_model* model) { return model ? model->kind.c_str() : ""; }

mtdl_status mtdl_model_predict(const mtdl_model* model, const mtdl_dataset* data, double* control, double* treated,
                               size_t n) {
  return guarded([&] {
    require(model, "model");
    require(data, "data");
    if (n != data->data.size()) fail(ErrorKind::InvalidArgument, "output length differs from dataset size");
    const auto preds = model->model->predict(data->data);
    for (size_t i = 0; i < n; ++i) {
      if (control) control[i] = preds[i].control;
      if (treated) treated[i] = preds[i].treated;
    }
  });
}

mtdl_status mtdl_model_predict_ite(const mtdl_model* model, const mtdl_dataset* data, double* ite, size_t n) {
  return guarded([&] {
    require(model, "model");
    require(data, "data");
    require(ite, "ite");
    if (n != data->data.size()) fail(ErrorKind::InvalidArgument, "output length differs from dataset size");
    const auto values = model->model->predict_ite(data->data);
    std::copy(values.begin(), values.end(), ite);
  });
}

// --- metrics ------------------------------------------------------------------------

mtdl_status mtdl_metric(const char* metric, const double* scores, const int* treated, const int* outcomes, size_t n,
                        double k, double* value) {
  return guarded([&] {
    require(metric, "metric");
    require(value, "value");
    const auto scored = scored_from(scores, treated, outcomes, n);
    const std::string m = metric;
    if (m == "qini") {
      *value = metrics::qini_score(scored);
    } else if (m == "auuc") {
      *value = metrics::auuc(scored);
    } else if (m == "average_uplift") {
      *value = metrics::average_uplift(scored);
    } else if (m == "uplift_at_k") {
      const auto r = metrics::uplift_at_k(scored, k);
      if (!r.ok()) fail(ErrorKind::Degenerate, r.reason);
      *value = *r.value;
    } else {
      fail(ErrorKind::InvalidArgument, "unknown metric '" + m + "'");
    }
  });
}

mtdl_status mtdl_curve_export(const char* curve, const char* format, const char* title, const double* scores,
                              const int* treated, const int* outcomes, size_t n, char** text) {
  return guarded([&] {
    require(curve, "curve");
    require(format, "format");
    require(text, "text");
    const auto scored = scored_from(scores, treated, outcomes, n);
    const std::string c = curve, f = format;
    metrics::Curve result;
    if (c == "qini") result = metrics::qini_curve(scored);
    else if (c == "uplift") result = metrics::uplift_curve(scored);
    else fail(ErrorKind::InvalidArgument, "unknown curve '" + c + "'");
    if (f == "csv") *text = dup_string(metrics::curve_csv(result));
    else if (f == "svg") *text = dup_string(metrics::curve_svg(result, title ? title : c));
    else fail(ErrorKind::InvalidArgument, "unknown curve format '" + f + "'");
  });
}

mtdl_status mtdl_spearman(const double* a, const double* b, size_t n, double* rho, double* p_value) {
  return guarded([&] {
    if (n > 0) {
      require(a, "a");
      require(b, "b");
    }
    const double r = metrics::spearman({a, n}, {b, n});
    if (rho) *rho = r;
    if (p_value) *p_value = metrics::spearman_p_value(r, n);
  });
}

// --- search and experiments -----------------------------------------------------------

mtdl_status mtdl_grid_search(const mtdl_dataset* train_set, const char* grid, const char* base_config_json,
                             size_t jobs, char** table_csv, char** best_config_json) {
  return guarded([&] {
    require(train_set, "train");
    require(grid, "grid");
    const std::string g = grid;
    const SearchGrid search = g == "full"    ? SearchGrid::full()
                              : g == "sub12" ? SearchGrid::sub12()
                                             : SearchGrid::from_json(parse_json(grid, "grid"));
    const TrainConfig base = TrainConfig::from_json(parse_json(base_config_json, "base config"));
    const GridResult result = grid_search(train_set->data, search, base, jobs);
    set_string(table_csv, result.table_csv());
    set_string(best_config_json, result.configs[result.best].to_json().dump(2));
  });
}

mtdl_status mtdl_run_experiment(const char* which, const char* spec_json, const char* config_json,
                                const char* out_root, char** run_dir, char** table_text) {
  return guarded([&] {
    require(which, "which");
    require(out_root, "out_root");
    const std::string w = which;
    if (w != "rq1" && w != "rq2") fail(ErrorKind::InvalidArgument, "unknown experiment '" + w + "'");
    const GeneratorSpec spec = spec_json && *spec_json
                                   ? GeneratorSpec::from_json(parse_json(spec_json, "generator spec"))
                                   : (w == "rq1" ? preset_spec("rq1-information") : time_sensitive_spec(0));
    const ExperimentConfig config = ExperimentConfig::from_json(parse_json(config_json, "experiment config"));
    const ExperimentResult result = w == "rq1" ? run_rq1(spec, config) : run_rq2(spec, config);
    nlohmann::json manifest = {{"experiment", w}, {"library_version", kVersion}, {"spec", spec.to_json()},
                               {"config", config.to_json()}};
    // jobs does not change results, so it stays out of the content address.
    manifest["config"].erase("jobs");
    const std::string dir = write_run(out_root, result, manifest);
    set_string(run_dir, dir);
    set_string(table_text, result.text_table());
  });
}

}  // extern "C"
