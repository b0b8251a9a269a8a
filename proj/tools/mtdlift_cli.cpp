// mtdlift command-line front end. Talks to the library only through the C API.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtdlift/mtdlift.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr const char* kFormulaFooter =
    "Metric formulas (Qini, AUUC, uplift@k, average uplift) are specified in docs/metrics.md; "
    "file formats in docs/formats.md.";

// Failure carrying the error class printed on stderr and its exit code.
struct CliError {
  std::string cls;
  std::string message;
  int code;
};

int exit_code_for(mtdl_status s) {
  switch (s) {
    case MTDL_OK: return 0;
    case MTDL_ERR_PARSE: return 3;
    case MTDL_ERR_SCHEMA: return 4;
    case MTDL_ERR_TAXONOMY: return 5;
    case MTDL_ERR_SIZE: return 6;
    case MTDL_ERR_CALIBRATION: return 7;
    case MTDL_ERR_NUMERIC: return 8;
    case MTDL_ERR_TRAINING: return 9;
    case MTDL_ERR_IO: return 10;
    case MTDL_ERR_INVALID_ARGUMENT: return 11;
    case MTDL_ERR_DEGENERATE: return 12;
    case MTDL_ERR_INTERNAL: return 70;
  }
  return 70;
}

void check(mtdl_status s) {
  if (s != MTDL_OK) throw CliError{mtdl_status_name(s), mtdl_last_error(), exit_code_for(s)};
}

[[noreturn]] void raise(mtdl_status s, const std::string& message) {
  throw CliError{mtdl_status_name(s), message, exit_code_for(s)};
}

struct DatasetDeleter {
  void operator()(mtdl_dataset* d) const { mtdl_dataset_free(d); }
};
struct ModelDeleter {
  void operator()(mtdl_model* m) const { mtdl_model_free(m); }
};
using DatasetPtr = std::unique_ptr<mtdl_dataset, DatasetDeleter>;
using ModelPtr = std::unique_ptr<mtdl_model, ModelDeleter>;

// Takes ownership of a C string from the library.
std::string take(char* s) {
  std::string out = s ? s : "";
  mtdl_string_free(s);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(MTDL_ERR_IO, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void make_parent(const fs::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
}

void write_file(const fs::path& path, const std::string& content) {
  make_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(MTDL_ERR_IO, "cannot write '" + path.string() + "'");
  out << content;
  if (!out) raise(MTDL_ERR_IO, "write failed for '" + path.string() + "'");
}

json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    raise(MTDL_ERR_PARSE, what + ": " + e.what());
  }
}

json read_json_file(const std::string& path) { return parse_json_text(read_file(path), path); }

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) raise(MTDL_ERR_IO, "cannot create directory '" + dir + "': " + ec.message());
}

DatasetPtr load_data(const std::string& path) {
  mtdl_dataset* d = nullptr;
  check(mtdl_dataset_load(path.c_str(), &d));
  return DatasetPtr(d);
}

struct Arms {
  std::vector<std::string> ids;
  std::vector<int> treated, outcome;
};

Arms arms_of(const mtdl_dataset* d) {
  Arms a;
  const size_t n = mtdl_dataset_size(d);
  a.treated.resize(n);
  a.outcome.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const char* id = nullptr;
    check(mtdl_dataset_sample(d, i, &id, &a.treated[i], &a.outcome[i], nullptr, nullptr));
    a.ids.emplace_back(id);
  }
  return a;
}

std::string shortest(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the shortest representation that round-trips.
  for (int p = 1; p <= 17; ++p) {
    char trial[64];
    std::snprintf(trial, sizeof trial, "%.*g", p, v);
    if (std::strtod(trial, nullptr) == v) return trial;
  }
  return buf;
}

// "id,score" with an optional header line; one score per dataset id.
std::vector<double> read_scores(const std::string& path, const Arms& arms) {
  std::istringstream in(read_file(path));
  std::map<std::string, double> by_id;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      raise(MTDL_ERR_PARSE, path + ": line " + std::to_string(line_no) + ": expected 'id,score'");
    const std::string id = line.substr(0, comma), value = line.substr(comma + 1);
    if (line_no == 1 && id == "id") continue;
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (value.empty() || *end != '\0')
      raise(MTDL_ERR_PARSE, path + ": line " + std::to_string(line_no) + ": bad score '" + value + "'");
    if (!by_id.emplace(id, v).second)
      raise(MTDL_ERR_SCHEMA, path + ": line " + std::to_string(line_no) + ": duplicate id '" + id + "'");
  }
  std::vector<double> scores;
  scores.reserve(arms.ids.size());
  for (const auto& id : arms.ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) raise(MTDL_ERR_SCHEMA, path + ": no score for sample '" + id + "'");
    scores.push_back(it->second);
  }
  if (by_id.size() != arms.ids.size()) raise(MTDL_ERR_SCHEMA, path + ": scores for ids not in the dataset");
  return scores;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    char* end = nullptr;
    const auto v = std::strtoull(item.c_str(), &end, 10);
    if (item.empty() || *end != '\0') raise(MTDL_ERR_INVALID_ARGUMENT, "bad seed '" + item + "' in --seeds");
    seeds.push_back(v);
  }
  if (seeds.empty()) raise(MTDL_ERR_INVALID_ARGUMENT, "--seeds is empty");
  return seeds;
}

json spec_from(const std::string& preset, const std::string& spec_path) {
  if (!preset.empty() && !spec_path.empty()) raise(MTDL_ERR_INVALID_ARGUMENT, "--preset and --spec are exclusive");
  if (!spec_path.empty()) return read_json_file(spec_path);
  char* text = nullptr;
  check(mtdl_preset_spec(preset.c_str(), &text));
  return parse_json_text(take(text), "preset");
}

// Hyperparameter flags shared by train and the experiment commands.
struct TrainFlags {
  std::optional<std::size_t> batch_size, epochs, hidden_size, output_size, patience;
  std::optional<double> learning_rate, l2, kld_weight, validation_fraction;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--batch-size", batch_size, "Mini-batch size");
    cmd->add_option("--epochs", epochs, "Epoch budget");
    cmd->add_option("--learning-rate", learning_rate, "Adam learning rate");
    cmd->add_option("--l2", l2, "Decoupled L2 weight decay");
    cmd->add_option("--hidden-size", hidden_size, "Hidden width (representation and LSTM)");
    cmd->add_option("--output-size", output_size, "Representation width");
    cmd->add_option("--kld-weight", kld_weight, "Weight of the divergence term");
    cmd->add_option("--patience", patience, "Early-stopping patience");
    cmd->add_option("--validation-fraction", validation_fraction, "Share of train held out for early stopping");
  }

  void apply(json& cfg) const {
    if (batch_size) cfg["batch_size"] = *batch_size;
    if (epochs) cfg["epochs"] = *epochs;
    if (learning_rate) cfg["learning_rate"] = *learning_rate;
    if (l2) cfg["l2"] = *l2;
    if (hidden_size) cfg["hidden_size"] = *hidden_size;
    if (output_size) cfg["output_size"] = *output_size;
    if (kld_weight) cfg["kld_weight"] = *kld_weight;
    if (patience) cfg["patience"] = *patience;
    if (validation_fraction) cfg["validation_fraction"] = *validation_fraction;
  }
};

// --- subcommands ------------------------------------------------------------------------

struct GenData {
  std::string preset, spec, out;
  std::optional<std::size_t> n;
  std::optional<std::uint64_t> seed;

  void run() const {
    if (preset.empty() && spec.empty()) raise(MTDL_ERR_INVALID_ARGUMENT, "one of --preset or --spec is required");
    json s = spec_from(preset, this->spec);
    if (n) s["n"] = *n;
    if (seed) s["seed"] = *seed;
    mtdl_dataset* raw = nullptr;
    char* report = nullptr;
    check(mtdl_dataset_generate(s.dump().c_str(), &raw, &report));
    DatasetPtr data(raw);
    take(report);
    make_parent(out);
    check(mtdl_dataset_save(data.get(), out.c_str()));
    const Arms a = arms_of(data.get());
    double treated = 0, pos_c = 0, pos_t = 0;
    for (size_t i = 0; i < a.ids.size(); ++i) {
      treated += a.treated[i];
      (a.treated[i] ? pos_t : pos_c) += a.outcome[i];
    }
    const double nn = static_cast<double>(a.ids.size());
    std::cout << "n=" << a.ids.size() << " treated_fraction=" << shortest(treated / nn)
              << " control_positive_rate=" << shortest(treated < nn ? pos_c / (nn - treated) : 0.0)
              << " treated_positive_rate=" << shortest(treated > 0 ? pos_t / treated : 0.0) << '\n';
  }
};

struct Transform {
  std::string data, mode, category_map, out;

  void run() const {
    DatasetPtr in = load_data(data);
    mtdl_dataset* raw = nullptr;
    if (mode == "collapse") {
      check(mtdl_dataset_collapse(in.get(), &raw));
    } else {
      const std::string map_text = category_map.empty() ? std::string() : read_file(category_map);
      check(mtdl_dataset_binarize(in.get(), mode.c_str(), category_map.empty() ? nullptr : map_text.c_str(), &raw));
    }
    DatasetPtr result(raw);
    make_parent(out);
    check(mtdl_dataset_save(result.get(), out.c_str()));
  }
};

struct Train {
  std::string model = "mtdnet", data, config, base_learner, out;
  std::optional<std::uint64_t> seed;
  TrainFlags flags;

  void run() const {
    DatasetPtr train = load_data(data);
    json cfg = config.empty() ? json::object() : read_json_file(config);
    const bool neural = model == "mtdnet" || model == "neural-tlearner";
    if (neural) {
      if (seed) cfg["seed"] = *seed;
      flags.apply(cfg);
      if (!base_learner.empty()) raise(MTDL_ERR_INVALID_ARGUMENT, "--base-learner applies to slearner/tlearner");
    } else if (!base_learner.empty()) {
      cfg["base_learner"] = base_learner;
    }
    mtdl_model* raw = nullptr;
    char* log = nullptr;
    check(mtdl_model_train(train.get(), model.c_str(), cfg.dump().c_str(), &raw, &log));
    ModelPtr m(raw);
    const std::string history = take(log);
    make_dir(out);
    const fs::path dir(out);
    check(mtdl_model_save(m.get(), (dir / "model.ckpt").string().c_str()));
    json effective = {{"model", model}, {"config", cfg}};
    if (seed) effective["seed"] = *seed;
    write_file(dir / "config.json", effective.dump(2) + "\n");
    if (!history.empty()) write_file(dir / "metrics.log", history);
  }
};

struct GridSearch {
  std::string data, grid = "sub12", config, out;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;

  void run() const {
    DatasetPtr train = load_data(data);
    json base = config.empty() ? json::object() : read_json_file(config);
    if (seed) base["seed"] = *seed;
    const std::string grid_arg = grid == "full" || grid == "sub12" ? grid : read_file(grid);
    char* table = nullptr;
    char* best = nullptr;
    check(mtdl_grid_search(train.get(), grid_arg.c_str(), base.dump().c_str(), jobs, &table, &best));
    make_dir(out);
    write_file(fs::path(out) / "grid_scores.csv", take(table));
    const std::string best_text = take(best);
    write_file(fs::path(out) / "best_config.json", best_text + "\n");
    std::cout << best_text << '\n';
  }
};

struct Predict {
  std::string model, data, out;

  void run() const {
    mtdl_model* raw = nullptr;
    check(mtdl_model_load(model.c_str(), &raw));
    ModelPtr m(raw);
    DatasetPtr d = load_data(data);
    const Arms a = arms_of(d.get());
    std::vector<double> ite(a.ids.size());
    check(mtdl_model_predict_ite(m.get(), d.get(), ite.data(), ite.size()));
    std::ostringstream csv;
    csv << "id,score\n";
    for (size_t i = 0; i < ite.size(); ++i) csv << a.ids[i] << ',' << shortest(ite[i]) << '\n';
    make_dir(out);
    write_file(fs::path(out) / "scores.csv", csv.str());
  }
};

struct Evaluate {
  std::string scores, data, metric = "all", out;
  double k = 0.30;

  void run() const {
    DatasetPtr d = load_data(data);
    const Arms a = arms_of(d.get());
    const std::vector<double> s = read_scores(scores, a);
    const std::vector<std::string> names = metric == "all"
                                               ? std::vector<std::string>{"qini", "auuc", "uplift_at_k", "average_uplift"}
                                               : std::vector<std::string>{metric};
    json result = json::object();
    for (const auto& name : names) {
      double v = 0.0;
      const mtdl_status st = mtdl_metric(name.c_str(), s.data(), a.treated.data(), a.outcome.data(), s.size(), k, &v);
      if (st == MTDL_ERR_DEGENERATE && metric == "all") {
        std::cout << name << "=undefined (" << mtdl_last_error() << ")\n";
        result[name] = nullptr;
        continue;
      }
      check(st);
      std::cout << name << '=' << shortest(v) << '\n';
      result[name] = v;
    }
    if (!out.empty()) {
      make_dir(out);
      write_file(fs::path(out) / "metrics.json", result.dump(2) + "\n");
    }
  }
};

struct PlotCurves {
  std::string scores, data, out, title;
  bool svg = false;

  void run() const {
    DatasetPtr d = load_data(data);
    const Arms a = arms_of(d.get());
    const std::vector<double> s = read_scores(scores, a);
    make_dir(out);
    for (const char* curve : {"qini", "uplift"}) {
      char* text = nullptr;
      check(mtdl_curve_export(curve, "csv", nullptr, s.data(), a.treated.data(), a.outcome.data(), s.size(), &text));
      write_file(fs::path(out) / (std::string(curve) + ".csv"), take(text));
      if (svg) {
        const std::string t = (title.empty() ? std::string() : title + " ") + curve + " curve";
        check(mtdl_curve_export(curve, "svg", t.c_str(), s.data(), a.treated.data(), a.outcome.data(), s.size(),
                                &text));
        write_file(fs::path(out) / (std::string(curve) + ".svg"), take(text));
      }
    }
  }
};

struct Experiment {
  std::string which, preset, spec, config, seeds, out, base_learner;
  std::optional<std::size_t> n;
  std::size_t jobs = 1;
  TrainFlags flags;

  void run() const {
    json s;
    if (!preset.empty() || !spec.empty()) {
      s = spec_from(preset, spec);
    } else {
      char* text = nullptr;
      check(mtdl_preset_spec(which == "rq1" ? "rq1-information" : "time-sensitive", &text));
      s = parse_json_text(take(text), "preset");
    }
    if (n) s["n"] = *n;
    json cfg = config.empty() ? json::object() : read_json_file(config);
    if (!seeds.empty()) cfg["seeds"] = parse_seeds(seeds);
    if (!base_learner.empty()) cfg["base_learner"] = base_learner;
    cfg["jobs"] = jobs;
    json net = cfg.contains("mtdnet") ? cfg["mtdnet"] : json::object();
    flags.apply(net);
    cfg["mtdnet"] = net;
    char* dir = nullptr;
    char* table = nullptr;
    check(mtdl_run_experiment(which.c_str(), s.dump().c_str(), cfg.dump().c_str(), out.c_str(), &dir, &table));
    std::cout << "run directory: " << take(dir) << "\n\n" << take(table);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtdlift: uplift modeling with multiple time-dependent treatments"};
  app.footer(kFormulaFooter);
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(mtdl_version()));

  auto with_footer = [&](CLI::App* cmd) {
    cmd->footer(kFormulaFooter);
    return cmd;
  };

  GenData gen;
  auto* c_gen = with_footer(app.add_subcommand("gen-data", "Generate a synthetic dataset with known ITE"));
  c_gen->add_option("--preset", gen.preset, "Named generator preset");
  c_gen->add_option("--spec", gen.spec, "Generator spec file (JSON)");
  c_gen->add_option("--n", gen.n, "Override the sample count");
  c_gen->add_option("--seed", gen.seed, "Override the seed");
  c_gen->add_option("-o,--out", gen.out, "Output dataset file")->required();

  Transform tr;
  auto* c_tr = with_footer(app.add_subcommand("transform", "Binarize or collapse the treatments of a dataset"));
  c_tr->add_option("--data", tr.data, "Input dataset")->required();
  c_tr->add_option("--mode", tr.mode, "basic, personnel, information, other or collapse")
      ->required()
      ->check(CLI::IsMember({"basic", "personnel", "information", "other", "collapse"}, CLI::ignore_case));
  c_tr->add_option("--category-map", tr.category_map, "Category map (JSON); default grouping otherwise");
  c_tr->add_option("-o,--out", tr.out, "Output dataset file")->required();

  Train train;
  auto* c_train = with_footer(app.add_subcommand("train", "Train an uplift model and write a checkpoint"));
  c_train->add_option("--model", train.model, "slearner, tlearner, mtdnet or neural-tlearner")
      ->check(CLI::IsMember({"slearner", "tlearner", "mtdnet", "neural-tlearner"}));
  c_train->add_option("--data", train.data, "Training dataset")->required();
  c_train->add_option("--config", train.config, "Model config file (JSON)");
  c_train->add_option("--seed", train.seed, "Seed for initialization, shuffling and validation split");
  c_train->add_option("--base-learner", train.base_learner, "logistic or boosted (meta-learners)");
  c_train->add_option("--out", train.out, "Output directory")->required();
  train.flags.add_to(c_train);

  GridSearch grid;
  auto* c_grid = with_footer(app.add_subcommand("grid-search", "Exhaustive MTDnet hyperparameter search"));
  c_grid->add_option("--data", grid.data, "Training dataset")->required();
  c_grid->add_option("--grid", grid.grid, "full, sub12 or a grid file (JSON)");
  c_grid->add_option("--config", grid.config, "Base config file (JSON)");
  c_grid->add_option("--seed", grid.seed, "Seed shared by every grid point");
  c_grid->add_option("--jobs", grid.jobs, "Concurrent grid points");
  c_grid->add_option("--out", grid.out, "Output directory")->required();

  Predict pred;
  auto* c_pred = with_footer(app.add_subcommand("predict", "Write per-sample ITE scores from a checkpoint"));
  c_pred->add_option("--model", pred.model, "Checkpoint file")->required();
  c_pred->add_option("--data", pred.data, "Dataset to score")->required();
  c_pred->add_option("--out", pred.out, "Output directory (scores.csv)")->required();

  Evaluate ev;
  auto* c_ev = with_footer(app.add_subcommand("evaluate", "Compute uplift metrics for a score file"));
  c_ev->add_option("--scores", ev.scores, "Score file (id,score)")->required();
  c_ev->add_option("--data", ev.data, "Dataset with arms and outcomes")->required();
  c_ev->add_option("--metric", ev.metric, "qini, auuc, uplift_at_k, average_uplift or all")
      ->check(CLI::IsMember({"qini", "auuc", "uplift_at_k", "average_uplift", "all"}));
  c_ev->add_option("--k", ev.k, "Top fraction for uplift_at_k")->check(CLI::Range(1e-12, 1.0));
  c_ev->add_option("--out", ev.out, "Optional output directory (metrics.json)");

  PlotCurves plot;
  auto* c_plot = with_footer(app.add_subcommand("plot-curves", "Export Qini and uplift curves"));
  c_plot->add_option("--scores", plot.scores, "Score file (id,score)")->required();
  c_plot->add_option("--data", plot.data, "Dataset with arms and outcomes")->required();
  c_plot->add_option("--out", plot.out, "Output directory")->required();
  c_plot->add_option("--title", plot.title, "Chart title prefix");
  c_plot->add_flag("--svg", plot.svg, "Also write SVG charts");

  Experiment rq1, rq2;
  rq1.which = "rq1";
  rq2.which = "rq2";
  for (auto* e : {&rq1, &rq2}) {
    auto* cmd = with_footer(app.add_subcommand(
        e->which, e->which == "rq1" ? "Category comparison over four binarizations"
                                    : "Binary vs multiple vs time-dependent treatment comparison"));
    cmd->add_option("--preset", e->preset, "Generator preset");
    cmd->add_option("--spec", e->spec, "Generator spec file (JSON)");
    cmd->add_option("--n", e->n, "Override the sample count");
    cmd->add_option("--config", e->config, "Experiment config file (JSON)");
    cmd->add_option("--seeds", e->seeds, "Comma-separated seeds");
    cmd->add_option("--base-learner", e->base_learner, "logistic or boosted");
    cmd->add_option("--jobs", e->jobs, "Concurrent runs");
    cmd->add_option("--out", e->out, "Root for the run directory")->required();
    e->flags.add_to(cmd);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (auto& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "mtdlift: error: usage: " << msg << '\n';
    return kExitUsage;
  }

  try {
    if (c_gen->parsed()) gen.run();
    else if (c_tr->parsed()) tr.run();
    else if (c_train->parsed()) train.run();
    else if (c_grid->parsed()) grid.run();
    else if (c_pred->parsed()) pred.run();
    else if (c_ev->parsed()) ev.run();
    else if (c_plot->parsed()) plot.run();
    else if (app.got_subcommand("rq1")) rq1.run();
    else if (app.got_subcommand("rq2")) rq2.run();
  } catch (const CliError& e) {
    std::string msg = e.message;
    for (auto& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "mtdlift: error: " << e.cls << ": " << msg << '\n';
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "mtdlift: error: internal: " << e.what() << '\n';
    return 70;
  }
  return 0;
}
