#include "mtdlift/model.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "mtdlift/baselines.hpp"
#include "mtdlift/error.hpp"
#include "mtdlift/mtdnet.hpp"

namespace mtdlift {

namespace {

constexpr const char* kCheckpointHeader = "#mtdlift-checkpoint v1";

std::string read_line(std::istream& in, const char* what) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Parse, std::string("checkpoint: missing ") + what);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

MtdNet read_mtdnet(std::istream& in) {
  in >> std::ws;
  std::istringstream dims_line(read_line(in, "dims line"));
  std::string tag;
  Dims dims;
  if (!(dims_line >> tag >> dims.context >> dims.categories >> dims.steps) || tag != "dims")
    fail(ErrorKind::Parse, "checkpoint: malformed dims line");
  const std::string config_line = read_line(in, "config line");
  if (config_line.rfind("config ", 0) != 0) fail(ErrorKind::Parse, "checkpoint: malformed config line");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(config_line.substr(7));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("checkpoint config: ") + e.what());
  }
  TrainConfig config = TrainConfig::from_json(doc);
  nn::ParamStore params = nn::ParamStore::read(in);
  return MtdNet(dims, config, std::move(params));
}

}  // namespace

std::vector<double> UpliftModel::predict_ite(const Dataset& data) const {
  const auto preds = predict(data);
  std::vector<double> ite(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) ite[i] = preds[i].ite();
  return ite;
}

void save_model(std::ostream& out, const UpliftModel& model) {
  out << kCheckpointHeader << '\n' << "model " << model.kind() << '\n';
  model.save_body(out);
  if (!out) fail(ErrorKind::Io, "checkpoint write failed");
}

void save_model(const std::string& path, const UpliftModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot open '" + path + "' for writing");
  save_model(out, model);
}

std::unique_ptr<UpliftModel> load_model(std::istream& in) {
  if (read_line(in, "header") != kCheckpointHeader) fail(ErrorKind::Parse, "checkpoint: bad header");
  const std::string model_line = read_line(in, "model line");
  if (model_line.rfind("model ", 0) != 0) fail(ErrorKind::Parse, "checkpoint: malformed model line");
  const std::string kind = model_line.substr(6);
  if (kind == "mtdnet") return std::make_unique<MtdNet>(read_mtdnet(in));
  if (kind == "neural-tlearner") {
    MtdNet control = read_mtdnet(in);
    MtdNet treated = read_mtdnet(in);
    return std::make_unique<NeuralTLearner>(std::move(control), std::move(treated));
  }
  if (kind == "slearner") return read_s_learner(in);
  if (kind == "tlearner") return read_t_learner(in);
  fail(ErrorKind::Parse, "checkpoint: unknown model kind '" + kind + "'");
}

std::unique_ptr<UpliftModel> load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path + "'");
  return load_model(in);
}

std::vector<metrics::ScoredSample> score(const Dataset& data, const std::vector<double>& ite) {
  if (ite.size() != data.size()) fail(ErrorKind::InvalidArgument, "score: prediction count differs from dataset size");
  std::vector<metrics::ScoredSample> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    out[i] = {ite[i], data[i].treated() ? metrics::Arm::Treated : metrics::Arm::Control, data[i].outcome};
  return out;
}

}  // namespace mtdlift
