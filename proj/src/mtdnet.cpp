#include "mtdlift/mtdnet.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>
#include <tuple>

#include "mtdlift/error.hpp"
#include "mtdlift/random.hpp"

namespace mtdlift {

using nn::Activation;
using nn::Tensor;

namespace {

constexpr double kDaysPerYear = 365.0;
constexpr std::size_t kEvalChunk = 1024;

template <typename T>
bool contains(std::initializer_list<T> values, T v) {
  return std::find(values.begin(), values.end(), v) != values.end();
}

Tensor context_matrix(const Dataset& data, std::span<const std::size_t> rows) {
  const std::size_t d = data.dims().context;
  Tensor x(rows.size(), d);
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(data[rows[i]].context.begin(), d, x.row(i).begin());
  return x;
}

Tensor gather_rows(const Tensor& src, const std::vector<std::uint8_t>& flags, bool want) {
  std::size_t n = 0;
  for (auto f : flags) n += (f != 0) == want;
  Tensor out(n, src.cols());
  std::size_t r = 0;
  for (std::size_t i = 0; i < flags.size(); ++i)
    if ((flags[i] != 0) == want) std::copy_n(src.row(i).begin(), src.cols(), out.row(r++).begin());
  return out;
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

// --- TrainConfig ----------------------------------------------------------------

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorKind::InvalidArgument, "train config: " + what); };
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (epochs < 1) bad("epochs must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) bad("learning_rate must be finite and >= 0");
  if (!(l2 >= 0.0) || !std::isfinite(l2)) bad("l2 must be finite and >= 0");
  if (hidden_size < 1) bad("hidden_size must be >= 1");
  if (output_size < 1) bad("output_size must be >= 1");
  if (patience < 1) bad("patience must be >= 1");
  if (!(kld_weight >= 0.0) || !std::isfinite(kld_weight)) bad("kld_weight must be finite and >= 0");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) bad("validation_fraction must lie in [0, 1)");
}

bool TrainConfig::within_search_grid() const {
  return contains<std::size_t>({32, 64, 128}, batch_size) && contains<std::size_t>({50, 100, 150}, epochs) &&
         contains({1e-4, 1e-5, 5e-6}, learning_rate) && contains({1e-4, 1e-5, 1e-6}, l2) &&
         contains<std::size_t>({32, 64, 128, 256}, hidden_size) && contains<std::size_t>({8, 16, 32}, output_size);
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"epochs", epochs},
          {"learning_rate", learning_rate},
          {"l2", l2},
          {"hidden_size", hidden_size},
          {"output_size", output_size},
          {"patience", patience},
          {"seed", seed},
          {"kld_weight", kld_weight},
          {"validation_fraction", validation_fraction},
          {"shared_repr", shared_repr},
          {"attention_on_repr", attention_on_repr},
          {"use_timestamps", use_timestamps}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) fail(ErrorKind::Parse, "train config must be a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "l2") c.l2 = value.get<double>();
      else if (key == "hidden_size") c.hidden_size = value.get<std::size_t>();
      else if (key == "output_size") c.output_size = value.get<std::size_t>();
      else if (key == "patience") c.patience = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "kld_weight") c.kld_weight = value.get<double>();
      else if (key == "validation_fraction") c.validation_fraction = value.get<double>();
      else if (key == "shared_repr") c.shared_repr = value.get<bool>();
      else if (key == "attention_on_repr") c.attention_on_repr = value.get<bool>();
      else if (key == "use_timestamps") c.use_timestamps = value.get<bool>();
      else fail(ErrorKind::Schema, "train config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// --- loss -------------------------------------------------------------------------

LossParts total_loss(const BatchOutput& out, std::span<const int> labels, double kld_weight, LossGrads* grads) {
  const std::size_t n = out.treated.size();
  if (n == 0) fail(ErrorKind::InvalidArgument, "total_loss: empty batch");
  if (labels.size() != n || out.pred_control.size() != n || out.pred_treated.size() != n)
    fail(ErrorKind::InvalidArgument, "total_loss: length mismatch");

  std::vector<double> pc, pt;
  std::vector<int> yc, yt;
  for (std::size_t i = 0; i < n; ++i) {
    if (out.treated[i]) {
      pt.push_back(out.pred_treated[i]);
      yt.push_back(labels[i]);
    } else {
      pc.push_back(out.pred_control[i]);
      yc.push_back(labels[i]);
    }
  }
  const auto lc = nn::bce_loss(pc, yc);
  const auto lt = nn::bce_loss(pt, yt);

  LossParts parts;
  parts.control = lc.loss;
  parts.treated = lt.loss;

  nn::KldResult kld;
  const bool balanced = out.repr_control_rows.rows() >= 2 && out.repr_treated_rows.rows() >= 2;
  if (balanced) {
    kld = nn::gaussian_kld(out.repr_control_rows, out.repr_treated_rows);
    parts.divergence = kld_weight * kld.value;
  } else {
    parts.divergence_skipped = true;
  }
  parts.total = parts.control + parts.treated + parts.divergence;

  if (grads) {
    grads->d_pred_control.assign(n, 0.0);
    grads->d_pred_treated.assign(n, 0.0);
    std::size_t ic = 0, it = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (out.treated[i])
        grads->d_pred_treated[i] = lt.d_pred[it++];
      else
        grads->d_pred_control[i] = lc.d_pred[ic++];
    }
    grads->d_repr_control_rows = Tensor(out.repr_control_rows.rows(), out.repr_control_rows.cols());
    grads->d_repr_treated_rows = Tensor(out.repr_treated_rows.rows(), out.repr_treated_rows.cols());
    if (balanced && kld_weight != 0.0) {
      for (std::size_t i = 0; i < kld.d_control.size(); ++i)
        grads->d_repr_control_rows[i] = kld_weight * kld.d_control[i];
      for (std::size_t i = 0; i < kld.d_treated.size(); ++i)
        grads->d_repr_treated_rows[i] = kld_weight * kld.d_treated[i];
    }
  }
  return parts;
}

std::string TrainHistory::metrics_log() const {
  std::ostringstream out;
  out << "epoch L_C L_T L_D total val_total\n";
  for (const auto& e : epochs)
    out << e.epoch << ' ' << format_double(e.control) << ' ' << format_double(e.treated) << ' '
        << format_double(e.divergence) << ' ' << format_double(e.total) << ' ' << format_double(e.val_total) << '\n';
  return out.str();
}

EarlyStopping::EarlyStopping(std::size_t patience) : patience_(patience) {
  if (patience_ < 1) fail(ErrorKind::InvalidArgument, "patience must be >= 1");
}

bool EarlyStopping::update(double value) {
  ++evaluations_;
  if (value < best_) {
    best_ = value;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

// --- MtdNet -----------------------------------------------------------------------

struct MtdNet::Cache {
  Tensor x;
  // Representation stacks: index 0 = control path, 1 = treated path. In
  // shared mode both entries alias the same activations.
  Tensor hidden[2];
  Tensor repr[2];
  Tensor head_c_hidden, pred_c;
  Tensor head_t_in, head_t_hidden, pred_t;
  std::vector<std::uint8_t> treated;
  std::vector<Tensor> step_inputs;
  std::vector<nn::LstmTrace> lstm;
  std::vector<nn::AttentionTrace> attention;
};

MtdNet::MtdNet(Dims dims, TrainConfig config) : dims_(dims), config_(config) {
  config_.validate();
  init_params();
}

MtdNet::MtdNet(Dims dims, TrainConfig config, nn::ParamStore params)
    : dims_(dims), config_(config), params_(std::move(params)) {
  config_.validate();
  MtdNet reference(dims, config);
  if (reference.params_.size() != params_.size())
    fail(ErrorKind::Schema, "checkpoint parameter set does not match the configuration");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& name = reference.params_.name(i);
    if (!params_.contains(name) || !params_.value(name).same_shape(reference.params_.value(i)))
      fail(ErrorKind::Schema, "checkpoint parameter '" + name + "' missing or misshaped");
  }
}

void MtdNet::init_params() {
  const std::size_t d = dims_.context;
  const std::size_t h = config_.hidden_size;
  const std::size_t r = config_.output_size;
  const std::uint64_t seed = config_.seed;
  auto dense = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    params_.add(prefix + ".W", nn::glorot_uniform(in, out, derive_seed(seed, prefix + ".W")));
    params_.add(prefix + ".b", Tensor(1, out));
  };
  if (config_.shared_repr) {
    dense("repr.l0", d, h);
    dense("repr.l1", h, r);
  } else {
    dense("control.repr.l0", d, h);
    dense("control.repr.l1", h, r);
    dense("treated.repr.l0", d, h);
    dense("treated.repr.l1", h, r);
  }
  dense("control.head.l0", r, r);
  dense("control.head.l1", r, 1);

  const std::size_t in = step_input_width();
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  params_.add("treated.lstm.Wx", nn::uniform_tensor(in, 4 * h, bound, derive_seed(seed, "treated.lstm.Wx")));
  params_.add("treated.lstm.Wh", nn::uniform_tensor(h, 4 * h, bound, derive_seed(seed, "treated.lstm.Wh")));
  Tensor lstm_bias(1, 4 * h);
  for (std::size_t j = h; j < 2 * h; ++j) lstm_bias[j] = 1.0;
  params_.add("treated.lstm.b", std::move(lstm_bias));

  const std::size_t ctx = config_.attention_on_repr ? r : d;
  params_.add("treated.attn.Wh", nn::glorot_uniform(h, r, derive_seed(seed, "treated.attn.Wh")));
  params_.add("treated.attn.Wx", nn::glorot_uniform(ctx, r, derive_seed(seed, "treated.attn.Wx")));
  params_.add("treated.attn.v", nn::glorot_uniform(r, 1, derive_seed(seed, "treated.attn.v")));

  dense("treated.head.l0", r + h, r);
  dense("treated.head.l1", r, 1);
}

BatchOutput MtdNet::run(const Dataset& data, std::span<const std::size_t> rows, Cache* cache) const {
  if (data.dims() != dims_) fail(ErrorKind::Schema, "dataset dims differ from the model dims");
  const std::size_t b = rows.size();
  const std::size_t h = config_.hidden_size;
  const std::size_t r = config_.output_size;
  const std::size_t steps = dims_.steps;
  const std::size_t in = step_input_width();

  Cache local;
  Cache& c = cache ? *cache : local;
  c.x = context_matrix(data, rows);

  auto repr_stack = [&](const std::string& prefix, int slot) {
    c.hidden[slot] = nn::dense_forward(c.x, params_.value(prefix + ".l0.W"), params_.value(prefix + ".l0.b"),
                                       Activation::Relu);
    c.repr[slot] = nn::dense_forward(c.hidden[slot], params_.value(prefix + ".l1.W"),
                                     params_.value(prefix + ".l1.b"), Activation::Identity);
  };
  if (config_.shared_repr) {
    repr_stack("repr", 0);
    c.hidden[1] = c.hidden[0];
    c.repr[1] = c.repr[0];
  } else {
    repr_stack("control.repr", 0);
    repr_stack("treated.repr", 1);
  }

  c.head_c_hidden = nn::dense_forward(c.repr[0], params_.value("control.head.l0.W"),
                                      params_.value("control.head.l0.b"), Activation::Relu);
  c.pred_c = nn::dense_forward(c.head_c_hidden, params_.value("control.head.l1.W"),
                               params_.value("control.head.l1.b"), Activation::Sigmoid);

  const Tensor& wx = params_.value("treated.lstm.Wx");
  const Tensor& wh = params_.value("treated.lstm.Wh");
  const Tensor& lb = params_.value("treated.lstm.b");
  const Tensor& awh = params_.value("treated.attn.Wh");
  const Tensor& awx = params_.value("treated.attn.Wx");
  const Tensor& av = params_.value("treated.attn.v");

  c.treated.assign(b, 0);
  c.head_t_in = Tensor(b, r + h);
  if (cache) {
    c.step_inputs.assign(b, Tensor());
    c.lstm.assign(b, nn::LstmTrace{});
    c.attention.assign(b, nn::AttentionTrace{});
  }
  std::vector<std::uint8_t> mask(steps);
  for (std::size_t i = 0; i < b; ++i) {
    const Sample& s = data[rows[i]];
    const TreatmentSeq& seq = s.treatments;
    std::copy_n(c.repr[1].row(i).begin(), r, c.head_t_in.row(i).begin());
    bool any = false;
    for (std::size_t t = 0; t < steps; ++t) {
      mask[t] = seq.masked_in(t) ? 1 : 0;
      any = any || mask[t];
    }
    c.treated[i] = any ? 1 : 0;
    if (!any) continue;  // zero sequence: pooled vector is 0

    Tensor inputs(steps, in);
    for (std::size_t t = 0; t < steps; ++t) {
      if (!mask[t]) continue;
      for (std::size_t k = 0; k < dims_.categories; ++k) inputs(t, k) = seq.at(t, k) ? 1.0 : 0.0;
      if (config_.use_timestamps) inputs(t, dims_.categories) = seq.timestamp(t) / kDaysPerYear;
    }
    auto trace = nn::lstm_forward(inputs, mask, wx, wh, lb);
    Tensor ctx(1, config_.attention_on_repr ? r : dims_.context);
    const auto ctx_src = config_.attention_on_repr ? c.repr[1].row(i) : c.x.row(i);
    std::copy(ctx_src.begin(), ctx_src.end(), ctx.row(0).begin());
    auto att = nn::attention_forward(trace.hidden, ctx, mask, awh, awx, av);
    std::copy_n(att.pooled.row(0).begin(), h, c.head_t_in.row(i).begin() + static_cast<std::ptrdiff_t>(r));
    if (cache) {
      c.step_inputs[i] = std::move(inputs);
      c.lstm[i] = std::move(trace);
      c.attention[i] = std::move(att);
    }
  }

  c.head_t_hidden = nn::dense_forward(c.head_t_in, params_.value("treated.head.l0.W"),
                                      params_.value("treated.head.l0.b"), Activation::Relu);
  c.pred_t = nn::dense_forward(c.head_t_hidden, params_.value("treated.head.l1.W"),
                               params_.value("treated.head.l1.b"), Activation::Sigmoid);
  nn::check_finite(c.pred_c, "control head output");
  nn::check_finite(c.pred_t, "treated head output");

  BatchOutput out;
  out.pred_control.assign(c.pred_c.values().begin(), c.pred_c.values().end());
  out.pred_treated.assign(c.pred_t.values().begin(), c.pred_t.values().end());
  out.treated = c.treated;
  out.repr_control_rows = gather_rows(c.repr[0], c.treated, false);
  out.repr_treated_rows = gather_rows(c.repr[1], c.treated, true);
  return out;
}

BatchOutput MtdNet::forward(const Dataset& data, std::span<const std::size_t> rows) const {
  return run(data, rows, nullptr);
}

void MtdNet::backward(const Dataset& data, std::span<const std::size_t> rows, Cache& c, const LossGrads& g) {
  (void)data;
  const std::size_t b = rows.size();
  const std::size_t h = config_.hidden_size;
  const std::size_t r = config_.output_size;

  auto dense_back = [&](const std::string& prefix, const Tensor& x, const Tensor& y, Activation act,
                        const Tensor& dy) {
    auto grads = nn::dense_backward(x, params_.value(prefix + ".W"), y, act, dy);
    add_into(params_.grad(prefix + ".W"), grads.dw);
    add_into(params_.grad(prefix + ".b"), grads.db);
    return std::move(grads.dx);
  };

  Tensor d_repr[2] = {Tensor(b, r), Tensor(b, r)};

  // Control head.
  Tensor dpc(b, 1, std::vector<double>(g.d_pred_control));
  Tensor d_hc = dense_back("control.head.l1", c.head_c_hidden, c.pred_c, Activation::Sigmoid, dpc);
  add_into(d_repr[0], dense_back("control.head.l0", c.repr[0], c.head_c_hidden, Activation::Relu, d_hc));

  // Treated head.
  Tensor dpt(b, 1, std::vector<double>(g.d_pred_treated));
  Tensor d_ht = dense_back("treated.head.l1", c.head_t_hidden, c.pred_t, Activation::Sigmoid, dpt);
  Tensor d_in = dense_back("treated.head.l0", c.head_t_in, c.head_t_hidden, Activation::Relu, d_ht);

  const Tensor& wx = params_.value("treated.lstm.Wx");
  const Tensor& wh = params_.value("treated.lstm.Wh");
  const Tensor& awh = params_.value("treated.attn.Wh");
  const Tensor& awx = params_.value("treated.attn.Wx");
  const Tensor& av = params_.value("treated.attn.v");
  Tensor& g_wx = params_.grad("treated.lstm.Wx");
  Tensor& g_wh = params_.grad("treated.lstm.Wh");
  Tensor& g_lb = params_.grad("treated.lstm.b");
  Tensor& g_awh = params_.grad("treated.attn.Wh");
  Tensor& g_awx = params_.grad("treated.attn.Wx");
  Tensor& g_av = params_.grad("treated.attn.v");

  std::vector<std::uint8_t> mask(dims_.steps);
  Tensor d_pooled(1, h);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < r; ++j) d_repr[1](i, j) += d_in(i, j);
    if (!c.treated[i]) continue;
    const Sample& s = data[rows[i]];
    for (std::size_t t = 0; t < dims_.steps; ++t) mask[t] = s.treatments.masked_in(t) ? 1 : 0;
    for (std::size_t j = 0; j < h; ++j) d_pooled[j] = d_in(i, r + j);
    Tensor ctx(1, config_.attention_on_repr ? r : dims_.context);
    const auto ctx_src = config_.attention_on_repr ? c.repr[1].row(i) : c.x.row(i);
    std::copy(ctx_src.begin(), ctx_src.end(), ctx.row(0).begin());
    auto att = nn::attention_backward(c.attention[i], c.lstm[i].hidden, ctx, mask, awh, awx, av, d_pooled, g_awh,
                                      g_awx, g_av);
    if (config_.attention_on_repr)
      for (std::size_t j = 0; j < r; ++j) d_repr[1](i, j) += att.d_context[j];
    nn::lstm_backward(c.lstm[i], c.step_inputs[i], mask, wx, wh, att.d_hidden, g_wx, g_wh, g_lb);
  }

  // Divergence gradients land on each row's factual-arm representation.
  std::size_t ic = 0, it = 0;
  for (std::size_t i = 0; i < b; ++i) {
    if (c.treated[i]) {
      for (std::size_t j = 0; j < r; ++j) d_repr[1](i, j) += g.d_repr_treated_rows(it, j);
      ++it;
    } else {
      for (std::size_t j = 0; j < r; ++j) d_repr[0](i, j) += g.d_repr_control_rows(ic, j);
      ++ic;
    }
  }

  auto repr_back = [&](const std::string& prefix, int slot, const Tensor& d) {
    Tensor dh = dense_back(prefix + ".l1", c.hidden[slot], c.repr[slot], Activation::Identity, d);
    dense_back(prefix + ".l0", c.x, c.hidden[slot], Activation::Relu, dh);
  };
  if (config_.shared_repr) {
    add_into(d_repr[0], d_repr[1]);
    repr_back("repr", 0, d_repr[0]);
  } else {
    repr_back("control.repr", 0, d_repr[0]);
    repr_back("treated.repr", 1, d_repr[1]);
  }
}

LossParts MtdNet::accumulate_gradients(const Dataset& data, std::span<const std::size_t> rows) {
  Cache cache;
  const BatchOutput out = run(data, rows, &cache);
  std::vector<int> labels(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = data[rows[i]].outcome;
  LossGrads grads;
  const LossParts parts = total_loss(out, labels, config_.kld_weight, &grads);
  if (!std::isfinite(parts.total)) fail(ErrorKind::Numeric, "non-finite training loss");
  backward(data, rows, cache, grads);
  return parts;
}

LossParts MtdNet::evaluate(const Dataset& data, std::span<const std::size_t> rows) const {
  BatchOutput all;
  std::vector<int> labels;
  std::vector<Tensor> ctrl_parts, treat_parts;
  for (std::size_t start = 0; start < rows.size(); start += kEvalChunk) {
    const auto chunk = rows.subspan(start, std::min(kEvalChunk, rows.size() - start));
    BatchOutput out = run(data, chunk, nullptr);
    all.pred_control.insert(all.pred_control.end(), out.pred_control.begin(), out.pred_control.end());
    all.pred_treated.insert(all.pred_treated.end(), out.pred_treated.begin(), out.pred_treated.end());
    all.treated.insert(all.treated.end(), out.treated.begin(), out.treated.end());
    ctrl_parts.push_back(std::move(out.repr_control_rows));
    treat_parts.push_back(std::move(out.repr_treated_rows));
    for (auto r : chunk) labels.push_back(data[r].outcome);
  }
  auto stack = [&](const std::vector<Tensor>& parts) {
    std::size_t n = 0;
    for (const auto& p : parts) n += p.rows();
    Tensor t(n, config_.output_size);
    std::size_t row = 0;
    for (const auto& p : parts)
      for (std::size_t i = 0; i < p.rows(); ++i, ++row) std::copy_n(p.row(i).begin(), p.cols(), t.row(row).begin());
    return t;
  };
  all.repr_control_rows = stack(ctrl_parts);
  all.repr_treated_rows = stack(treat_parts);
  return total_loss(all, labels, config_.kld_weight, nullptr);
}

std::vector<Prediction> MtdNet::predict(const Dataset& data) const {
  std::vector<Prediction> preds;
  preds.reserve(data.size());
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
    rows.resize(std::min(kEvalChunk, data.size() - start));
    std::iota(rows.begin(), rows.end(), start);
    const BatchOutput out = run(data, rows, nullptr);
    for (std::size_t i = 0; i < rows.size(); ++i) preds.push_back({out.pred_control[i], out.pred_treated[i]});
  }
  return preds;
}

void MtdNet::save_body(std::ostream& out) const {
  out << "dims " << dims_.context << ' ' << dims_.categories << ' ' << dims_.steps << '\n';
  out << "config " << config_.to_json().dump() << '\n';
  params_.write(out);
}

// --- training -----------------------------------------------------------------------

namespace {

TrainHistory train_rows(MtdNet& model, const Dataset& data, bool require_both_arms) {
  const TrainConfig& cfg = model.config();
  if (data.empty()) fail(ErrorKind::Training, "training set is empty");
  if (data.dims() != model.dims()) fail(ErrorKind::Schema, "training set dims differ from the model dims");
  if (require_both_arms) {
    const std::size_t treated = data.treated_count();
    if (treated == 0) fail(ErrorKind::Training, "training set has no treated samples");
    if (treated == data.size()) fail(ErrorKind::Training, "training set has no control samples");
  }

  std::vector<std::size_t> fit_rows, val_rows;
  if (cfg.validation_fraction > 0.0 && data.size() >= 2) {
    std::tie(fit_rows, val_rows) =
        split_indices(data, SplitSpec{1.0 - cfg.validation_fraction, derive_seed(cfg.seed, "validation")});
  } else {
    fit_rows.resize(data.size());
    std::iota(fit_rows.begin(), fit_rows.end(), std::size_t{0});
  }
  const bool monitored = !val_rows.empty();

  nn::ParamStore& params = model.params();
  nn::Adam adam({cfg.learning_rate, cfg.l2});
  EarlyStopping stopper(cfg.patience);
  nn::ParamStore best = params;
  TrainHistory history;

  std::vector<std::size_t> order = fit_rows;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, "epoch-" + std::to_string(epoch)));
    rng.shuffle(order.begin(), order.end());

    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> batch(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      params.zero_grad();
      const LossParts parts = model.accumulate_gradients(data, batch);
      adam.step(params);
      history.steps.push_back({parts.control, parts.treated, parts.divergence, parts.total});
      rec.control += parts.control;
      rec.treated += parts.treated;
      rec.divergence += parts.divergence;
      rec.total += parts.total;
      rec.kld_skipped += parts.divergence_skipped ? 1 : 0;
      ++batches;
    }
    const double nb = static_cast<double>(batches);
    rec.control /= nb;
    rec.treated /= nb;
    rec.divergence /= nb;
    rec.total /= nb;
    history.kld_skipped += rec.kld_skipped;

    rec.val_total = monitored ? model.evaluate(data, val_rows).total : rec.total;
    if (!std::isfinite(rec.val_total)) fail(ErrorKind::Numeric, "non-finite validation loss");
    history.epochs.push_back(rec);

    if (stopper.update(rec.val_total)) {
      history.best_epoch = epoch;
      history.best_val = rec.val_total;
      if (monitored) best = params;
    }
    if (monitored && stopper.should_stop()) {
      history.stopped_early = true;
      break;
    }
  }
  if (monitored) params.assign(best);
  return history;
}

}  // namespace

TrainHistory train(MtdNet& model, const Dataset& train_set) { return train_rows(model, train_set, true); }

std::vector<Prediction> NeuralTLearner::predict(const Dataset& data) const {
  auto c = control_.predict(data);
  const auto t = treated_.predict(data);
  for (std::size_t i = 0; i < c.size(); ++i) c[i].treated = t[i].treated;
  return c;
}

void NeuralTLearner::save_body(std::ostream& out) const {
  control_.save_body(out);
  treated_.save_body(out);
}

NeuralTLearner train_neural_t_learner(const Dataset& train_set, TrainConfig config) {
  config.shared_repr = false;
  config.kld_weight = 0.0;
  std::vector<std::size_t> control_rows, treated_rows;
  for (std::size_t i = 0; i < train_set.size(); ++i)
    (train_set[i].treated() ? treated_rows : control_rows).push_back(i);
  if (control_rows.empty()) fail(ErrorKind::Training, "neural T-learner: no control samples");
  if (treated_rows.empty()) fail(ErrorKind::Training, "neural T-learner: no treated samples");

  MtdNet control_model(train_set.dims(), config);
  MtdNet treated_model(train_set.dims(), config);
  train_rows(control_model, subset(train_set, control_rows), false);
  train_rows(treated_model, subset(train_set, treated_rows), false);
  return NeuralTLearner(std::move(control_model), std::move(treated_model));
}

// --- grid search ----------------------------------------------------------------------

SearchGrid SearchGrid::full() {
  return {{32, 64, 128}, {50, 100, 150}, {1e-4, 1e-5, 5e-6}, {1e-4, 1e-5, 1e-6}, {32, 64, 128, 256}, {8, 16, 32}};
}

SearchGrid SearchGrid::sub12() { return {{64, 128}, {50}, {1e-4}, {1e-5}, {32, 64}, {8, 16, 32}}; }

SearchGrid SearchGrid::from_json(const nlohmann::json& doc) {
  SearchGrid g;
  try {
    g.batch_size = doc.at("batch_size").get<std::vector<std::size_t>>();
    g.epochs = doc.at("epochs").get<std::vector<std::size_t>>();
    g.learning_rate = doc.at("learning_rate").get<std::vector<double>>();
    g.l2 = doc.at("l2").get<std::vector<double>>();
    g.hidden_size = doc.at("hidden_size").get<std::vector<std::size_t>>();
    g.output_size = doc.at("output_size").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("search grid: ") + e.what());
  }
  if (g.size() == 0) fail(ErrorKind::InvalidArgument, "search grid is empty");
  return g;
}

nlohmann::json SearchGrid::to_json() const {
  return {{"batch_size", batch_size}, {"epochs", epochs},           {"learning_rate", learning_rate},
          {"l2", l2},                 {"hidden_size", hidden_size}, {"output_size", output_size}};
}

std::size_t SearchGrid::size() const {
  return batch_size.size() * epochs.size() * learning_rate.size() * l2.size() * hidden_size.size() *
         output_size.size();
}

TrainConfig SearchGrid::at(std::size_t i, const TrainConfig& base) const {
  if (i >= size()) fail(ErrorKind::InvalidArgument, "grid index out of range");
  TrainConfig c = base;
  c.output_size = output_size[i % output_size.size()];
  i /= output_size.size();
  c.hidden_size = hidden_size[i % hidden_size.size()];
  i /= hidden_size.size();
  c.l2 = l2[i % l2.size()];
  i /= l2.size();
  c.learning_rate = learning_rate[i % learning_rate.size()];
  i /= learning_rate.size();
  c.epochs = epochs[i % epochs.size()];
  i /= epochs.size();
  c.batch_size = batch_size[i];
  return c;
}

std::string GridResult::table_csv() const {
  std::ostringstream out;
  out << "index,batch_size,epochs,learning_rate,l2,hidden_size,output_size,val_total\n";
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& c = configs[i];
    out << i << ',' << c.batch_size << ',' << c.epochs << ',' << format_double(c.learning_rate) << ','
        << format_double(c.l2) << ',' << c.hidden_size << ',' << c.output_size << ',' << format_double(scores[i])
        << '\n';
  }
  return out.str();
}

GridResult grid_search(const Dataset& train_set, const SearchGrid& grid, const TrainConfig& base, std::size_t jobs) {
  const std::size_t n = grid.size();
  if (n == 0) fail(ErrorKind::InvalidArgument, "search grid is empty");
  GridResult result;
  result.scores.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) result.configs.push_back(grid.at(i, base));

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        MtdNet model(train_set.dims(), result.configs[i]);
        result.scores[i] = train(model, train_set).best_val;
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, n);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  result.best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (result.scores[i] < result.scores[result.best]) result.best = i;
  return result;
}

}  // namespace mtdlift
