#include "mtdlift/neural.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "mtdlift/dataset.hpp"
#include "mtdlift/error.hpp"
#include "mtdlift/random.hpp"

namespace mtdlift::nn {

namespace {

void require(bool ok, std::string_view what) {
  if (!ok) fail(ErrorKind::InvalidArgument, "shape mismatch: " + std::string(what));
}

inline double activate(double z, Activation act) {
  switch (act) {
    case Activation::Relu: return z > 0.0 ? z : 0.0;
    case Activation::Sigmoid: return sigmoid(z);
    case Activation::Identity: break;
  }
  return z;
}

inline double activation_slope(double y, Activation act) {
  switch (act) {
    case Activation::Relu: return y > 0.0 ? 1.0 : 0.0;
    case Activation::Sigmoid: return y * (1.0 - y);
    case Activation::Identity: break;
  }
  return 1.0;
}

}  // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) fail(ErrorKind::InvalidArgument, "tensor data length != rows*cols");
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul inner dimensions");
  Tensor out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.data() + i * n;
    const double* ar = a.data() + i * a.cols();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double av = ar[k];
      if (av == 0.0) continue;
      const double* br = b.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

void add_matmul_tn(Tensor& out, const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols(), "matmul_tn");
  const std::size_t n = b.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* ar = a.data() + r * a.cols();
    const double* br = b.data() + r * n;
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* o = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), "matmul_nt inner dimensions");
  Tensor out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.data() + i * a.cols();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* br = b.data() + j * b.cols();
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

void check_finite(const Tensor& t, std::string_view what) {
  for (double v : t.values())
    if (!std::isfinite(v)) fail(ErrorKind::Numeric, "non-finite value in " + std::string(what));
}

// --- dense --------------------------------------------------------------------

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b, Activation act) {
  require(x.cols() == w.rows(), "dense input width");
  require(b.rows() == 1 && b.cols() == w.cols(), "dense bias");
  Tensor y = matmul(x, w);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = activate(r[j] + b[j], act);
  }
  return y;
}

DenseGrads dense_backward(const Tensor& x, const Tensor& w, const Tensor& y, Activation act, const Tensor& dy) {
  require(dy.same_shape(y) && x.rows() == y.rows() && x.cols() == w.rows() && y.cols() == w.cols(),
          "dense backward");
  Tensor dz = dy;
  if (act != Activation::Identity)
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] *= activation_slope(y[i], act);
  DenseGrads g{matmul_nt(dz, w), Tensor(w.rows(), w.cols()), Tensor(1, w.cols())};
  add_matmul_tn(g.dw, x, dz);
  for (std::size_t i = 0; i < dz.rows(); ++i)
    for (std::size_t j = 0; j < dz.cols(); ++j) g.db[j] += dz(i, j);
  return g;
}

// --- LSTM ---------------------------------------------------------------------

LstmTrace lstm_forward(const Tensor& inputs, std::span<const std::uint8_t> mask, const Tensor& wx,
                       const Tensor& wh, const Tensor& b) {
  const std::size_t steps = inputs.rows();
  const std::size_t h = wh.rows();
  require(mask.size() == steps, "lstm mask length");
  require(wx.rows() == inputs.cols() && wx.cols() == 4 * h, "lstm Wx");
  require(wh.cols() == 4 * h, "lstm Wh");
  require(b.rows() == 1 && b.cols() == 4 * h, "lstm bias");

  LstmTrace tr{Tensor(steps, 4 * h), Tensor(steps, h), Tensor(steps, h)};
  std::vector<double> z(4 * h);
  for (std::size_t t = 0; t < steps; ++t) {
    const double* h_prev = t > 0 ? tr.hidden.data() + (t - 1) * h : nullptr;
    const double* c_prev = t > 0 ? tr.cells.data() + (t - 1) * h : nullptr;
    double* h_out = tr.hidden.data() + t * h;
    double* c_out = tr.cells.data() + t * h;
    if (!mask[t]) {
      for (std::size_t j = 0; j < h; ++j) {
        h_out[j] = h_prev ? h_prev[j] : 0.0;
        c_out[j] = c_prev ? c_prev[j] : 0.0;
      }
      continue;
    }
    std::copy(b.data(), b.data() + 4 * h, z.begin());
    const double* xr = inputs.data() + t * inputs.cols();
    for (std::size_t k = 0; k < inputs.cols(); ++k) {
      if (xr[k] == 0.0) continue;
      const double* wr = wx.data() + k * 4 * h;
      for (std::size_t j = 0; j < 4 * h; ++j) z[j] += xr[k] * wr[j];
    }
    if (h_prev) {
      for (std::size_t k = 0; k < h; ++k) {
        if (h_prev[k] == 0.0) continue;
        const double* wr = wh.data() + k * 4 * h;
        for (std::size_t j = 0; j < 4 * h; ++j) z[j] += h_prev[k] * wr[j];
      }
    }
    double* gates = tr.gates.data() + t * 4 * h;
    for (std::size_t j = 0; j < h; ++j) {
      const double i_g = sigmoid(z[j]);
      const double f_g = sigmoid(z[h + j]);
      const double g_g = std::tanh(z[2 * h + j]);
      const double o_g = sigmoid(z[3 * h + j]);
      gates[j] = i_g;
      gates[h + j] = f_g;
      gates[2 * h + j] = g_g;
      gates[3 * h + j] = o_g;
      const double c = f_g * (c_prev ? c_prev[j] : 0.0) + i_g * g_g;
      c_out[j] = c;
      h_out[j] = o_g * std::tanh(c);
    }
  }
  return tr;
}

Tensor lstm_backward(const LstmTrace& trace, const Tensor& inputs, std::span<const std::uint8_t> mask,
                     const Tensor& wx, const Tensor& wh, const Tensor& d_hidden, Tensor& dwx, Tensor& dwh,
                     Tensor& db) {
  const std::size_t steps = inputs.rows();
  const std::size_t h = wh.rows();
  const std::size_t in = inputs.cols();
  require(d_hidden.rows() == steps && d_hidden.cols() == h, "lstm d_hidden");
  require(dwx.same_shape(wx) && dwh.same_shape(wh) && db.cols() == 4 * h, "lstm grad buffers");

  Tensor dx(steps, in);
  std::vector<double> dh_carry(h, 0.0), dc_carry(h, 0.0), dz(4 * h), dh(h), dc(h);
  for (std::size_t t = steps; t-- > 0;) {
    for (std::size_t j = 0; j < h; ++j) {
      dh[j] = d_hidden(t, j) + dh_carry[j];
      dc[j] = dc_carry[j];
    }
    if (!mask[t]) {
      dh_carry = dh;
      dc_carry = dc;
      continue;
    }
    const double* gates = trace.gates.data() + t * 4 * h;
    const double* c = trace.cells.data() + t * h;
    const double* c_prev = t > 0 ? trace.cells.data() + (t - 1) * h : nullptr;
    const double* h_prev = t > 0 ? trace.hidden.data() + (t - 1) * h : nullptr;
    for (std::size_t j = 0; j < h; ++j) {
      const double i_g = gates[j], f_g = gates[h + j], g_g = gates[2 * h + j], o_g = gates[3 * h + j];
      const double tc = std::tanh(c[j]);
      const double d_o = dh[j] * tc;
      const double dcj = dc[j] + dh[j] * o_g * (1.0 - tc * tc);
      const double cp = c_prev ? c_prev[j] : 0.0;
      dz[j] = dcj * g_g * i_g * (1.0 - i_g);
      dz[h + j] = dcj * cp * f_g * (1.0 - f_g);
      dz[2 * h + j] = dcj * i_g * (1.0 - g_g * g_g);
      dz[3 * h + j] = d_o * o_g * (1.0 - o_g);
      dc_carry[j] = dcj * f_g;
    }
    const double* xr = inputs.data() + t * in;
    for (std::size_t k = 0; k < in; ++k) {
      double* g = dwx.data() + k * 4 * h;
      const double* w = wx.data() + k * 4 * h;
      double acc = 0.0;
      for (std::size_t j = 0; j < 4 * h; ++j) {
        g[j] += xr[k] * dz[j];
        acc += dz[j] * w[j];
      }
      dx(t, k) = acc;
    }
    for (std::size_t k = 0; k < h; ++k) {
      double* g = dwh.data() + k * 4 * h;
      const double* w = wh.data() + k * 4 * h;
      const double hp = h_prev ? h_prev[k] : 0.0;
      double acc = 0.0;
      for (std::size_t j = 0; j < 4 * h; ++j) {
        if (hp != 0.0) g[j] += hp * dz[j];
        acc += dz[j] * w[j];
      }
      dh_carry[k] = acc;
    }
    for (std::size_t j = 0; j < 4 * h; ++j) db[j] += dz[j];
  }
  return dx;
}

// --- attention ----------------------------------------------------------------

AttentionTrace attention_forward(const Tensor& hidden, const Tensor& context, std::span<const std::uint8_t> mask,
                                 const Tensor& wh, const Tensor& wx, const Tensor& v) {
  const std::size_t steps = hidden.rows();
  const std::size_t hd = hidden.cols();
  const std::size_t a = wh.cols();
  require(mask.size() == steps, "attention mask length");
  require(wh.rows() == hd, "attention Wh");
  require(context.rows() == 1 && wx.rows() == context.cols() && wx.cols() == a, "attention Wx");
  require(v.rows() == a && v.cols() == 1, "attention v");

  AttentionTrace tr;
  tr.weights.assign(steps, 0.0);
  tr.scores_hidden = Tensor(steps, a);
  tr.pooled = Tensor(1, hd);
  tr.empty = std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; });
  if (tr.empty) return tr;

  const Tensor ctx = matmul(context, wx);
  std::vector<double> e(steps, 0.0);
  double e_max = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < steps; ++t) {
    if (!mask[t]) continue;
    double* u = tr.scores_hidden.data() + t * a;
    for (std::size_t j = 0; j < a; ++j) u[j] = ctx[j];
    const double* hr = hidden.data() + t * hd;
    for (std::size_t k = 0; k < hd; ++k) {
      const double* w = wh.data() + k * a;
      for (std::size_t j = 0; j < a; ++j) u[j] += hr[k] * w[j];
    }
    double s = 0.0;
    for (std::size_t j = 0; j < a; ++j) {
      u[j] = std::tanh(u[j]);
      s += u[j] * v[j];
    }
    e[t] = s;
    e_max = std::max(e_max, s);
  }
  double total = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    if (!mask[t]) continue;
    tr.weights[t] = std::exp(e[t] - e_max);
    total += tr.weights[t];
  }
  for (std::size_t t = 0; t < steps; ++t) {
    if (!mask[t]) continue;
    tr.weights[t] /= total;
    for (std::size_t k = 0; k < hd; ++k) tr.pooled[k] += tr.weights[t] * hidden(t, k);
  }
  return tr;
}

AttentionInputGrads attention_backward(const AttentionTrace& trace, const Tensor& hidden, const Tensor& context,
                                       std::span<const std::uint8_t> mask, const Tensor& wh, const Tensor& wx,
                                       const Tensor& v, const Tensor& d_pooled, Tensor& dwh, Tensor& dwx,
                                       Tensor& dv) {
  const std::size_t steps = hidden.rows();
  const std::size_t hd = hidden.cols();
  const std::size_t a = wh.cols();
  require(d_pooled.rows() == 1 && d_pooled.cols() == hd, "attention d_pooled");
  AttentionInputGrads g{Tensor(steps, hd), Tensor(1, context.cols())};
  if (trace.empty) return g;

  std::vector<double> d_alpha(steps, 0.0);
  double weighted = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    if (!mask[t]) continue;
    double s = 0.0;
    for (std::size_t k = 0; k < hd; ++k) {
      s += d_pooled[k] * hidden(t, k);
      g.d_hidden(t, k) += trace.weights[t] * d_pooled[k];
    }
    d_alpha[t] = s;
    weighted += trace.weights[t] * s;
  }
  std::vector<double> d_pre_ctx(a, 0.0), d_pre(a);
  for (std::size_t t = 0; t < steps; ++t) {
    if (!mask[t]) continue;
    const double de = trace.weights[t] * (d_alpha[t] - weighted);
    const double* u = trace.scores_hidden.data() + t * a;
    for (std::size_t j = 0; j < a; ++j) {
      dv[j] += u[j] * de;
      d_pre[j] = de * v[j] * (1.0 - u[j] * u[j]);
      d_pre_ctx[j] += d_pre[j];
    }
    const double* hr = hidden.data() + t * hd;
    for (std::size_t k = 0; k < hd; ++k) {
      double* gw = dwh.data() + k * a;
      const double* w = wh.data() + k * a;
      double acc = 0.0;
      for (std::size_t j = 0; j < a; ++j) {
        gw[j] += hr[k] * d_pre[j];
        acc += d_pre[j] * w[j];
      }
      g.d_hidden(t, k) += acc;
    }
  }
  for (std::size_t r = 0; r < context.cols(); ++r) {
    double* gw = dwx.data() + r * a;
    const double* w = wx.data() + r * a;
    double acc = 0.0;
    for (std::size_t j = 0; j < a; ++j) {
      gw[j] += context[r] * d_pre_ctx[j];
      acc += d_pre_ctx[j] * w[j];
    }
    g.d_context[r] = acc;
  }
  return g;
}

// --- divergence and loss ------------------------------------------------------

double gaussian_kl(double mean_t, double var_t, double mean_c, double var_c) {
  const double diff = mean_t - mean_c;
  return 0.5 * std::log(var_c / var_t) + (var_t + diff * diff) / (2.0 * var_c) - 0.5;
}

KldResult gaussian_kld(const Tensor& control, const Tensor& treated, double variance_floor) {
  require(control.cols() == treated.cols(), "kld batch widths");
  if (control.rows() < 2 || treated.rows() < 2)
    fail(ErrorKind::Size, "gaussian_kld needs at least two rows per batch");
  const std::size_t d = control.cols();
  const double nc = static_cast<double>(control.rows());
  const double nt = static_cast<double>(treated.rows());

  auto moments = [d](const Tensor& x, std::vector<double>& mean, std::vector<double>& var) {
    mean.assign(d, 0.0);
    var.assign(d, 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += x(i, j);
    for (double& m : mean) m /= static_cast<double>(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = x(i, j) - mean[j];
        var[j] += c * c;
      }
    for (double& v : var) v /= static_cast<double>(x.rows());
  };

  std::vector<double> mc, vc, mt, vt;
  moments(control, mc, vc);
  moments(treated, mt, vt);

  KldResult r{0.0, Tensor(control.rows(), d), Tensor(treated.rows(), d)};
  std::vector<double> g_mc(d), g_vc(d), g_mt(d), g_vt(d);
  for (std::size_t j = 0; j < d; ++j) {
    const bool floor_c = vc[j] < variance_floor;
    const bool floor_t = vt[j] < variance_floor;
    const double sc = floor_c ? variance_floor : vc[j];
    const double st = floor_t ? variance_floor : vt[j];
    const double diff = mt[j] - mc[j];
    r.value += gaussian_kl(mt[j], st, mc[j], sc);
    g_mt[j] = diff / sc;
    g_mc[j] = -diff / sc;
    g_vt[j] = floor_t ? 0.0 : 0.5 / sc - 0.5 / st;
    g_vc[j] = floor_c ? 0.0 : 0.5 / sc - (st + diff * diff) / (2.0 * sc * sc);
  }
  for (std::size_t i = 0; i < control.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j)
      r.d_control(i, j) = g_mc[j] / nc + g_vc[j] * 2.0 * (control(i, j) - mc[j]) / nc;
  for (std::size_t i = 0; i < treated.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j)
      r.d_treated(i, j) = g_mt[j] / nt + g_vt[j] * 2.0 * (treated(i, j) - mt[j]) / nt;
  return r;
}

BceResult bce_loss(std::span<const double> p, std::span<const int> y) {
  if (p.size() != y.size()) fail(ErrorKind::InvalidArgument, "bce_loss: length mismatch");
  BceResult r;
  r.d_pred.assign(p.size(), 0.0);
  if (p.empty()) return r;
  const double n = static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool clamped = p[i] < kProbabilityClamp || p[i] > 1.0 - kProbabilityClamp;
    const double q = std::clamp(p[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    r.loss -= y[i] ? std::log(q) : std::log1p(-q);
    if (!clamped) r.d_pred[i] = (y[i] ? -1.0 / q : 1.0 / (1.0 - q)) / n;
  }
  r.loss /= n;
  return r;
}

// --- parameters ---------------------------------------------------------------

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (index_.count(name)) fail(ErrorKind::Internal, "duplicate parameter '" + name + "'");
  index_.emplace(name, names_.size());
  names_.push_back(name);
  grads_.emplace_back(value.rows(), value.cols());
  values_.push_back(std::move(value));
  return values_.back();
}

std::size_t ParamStore::index(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) fail(ErrorKind::InvalidArgument, "unknown parameter '" + std::string(name) + "'");
  return it->second;
}

bool ParamStore::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

void ParamStore::zero_grad() {
  for (auto& g : grads_) g.fill(0.0);
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

void ParamStore::assign(const ParamStore& other) {
  for (std::size_t i = 0; i < other.size(); ++i) {
    Tensor& dst = value(other.name(i));
    if (!dst.same_shape(other.value(i)))
      fail(ErrorKind::Schema, "parameter '" + other.name(i) + "' has a different shape");
    dst = other.value(i);
  }
}

void ParamStore::write(std::ostream& out) const {
  out << "#mtdlift-params v1 " << names_.size() << '\n';
  for (std::size_t i = 0; i < names_.size(); ++i) {
    const Tensor& t = values_[i];
    out << names_[i] << ' ' << t.rows() << ' ' << t.cols() << '\n';
    for (std::size_t j = 0; j < t.size(); ++j) {
      if (j) out << ' ';
      out << format_double(t[j]);
    }
    out << '\n';
  }
}

ParamStore ParamStore::read(std::istream& in) {
  std::string magic, version;
  std::size_t count = 0;
  if (!(in >> magic >> version >> count) || magic != "#mtdlift-params" || version != "v1")
    fail(ErrorKind::Parse, "expected '#mtdlift-params v1 <count>'");
  ParamStore store;
  for (std::size_t i = 0; i < count; ++i) {
    std::string name, token;
    std::size_t rows = 0, cols = 0;
    if (!(in >> name >> rows >> cols)) fail(ErrorKind::Parse, "truncated parameter header");
    std::vector<double> data(rows * cols);
    for (auto& v : data) {
      if (!(in >> token)) fail(ErrorKind::Parse, "truncated values for '" + name + "'");
      v = parse_double(token);
    }
    store.add(name, Tensor(rows, cols, std::move(data)));
  }
  return store;
}

void Adam::step(ParamStore& params) {
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.emplace_back(params.value(i).rows(), params.value(i).cols());
      v_.emplace_back(params.value(i).rows(), params.value(i).cols());
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const double lr = config_.learning_rate;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.value(i);
    const Tensor& g = params.grad(i);
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.epsilon);
      p[j] -= lr * (update + config_.weight_decay * p[j]);
    }
  }
}

Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor glorot_uniform(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  return uniform_tensor(rows, cols, std::sqrt(6.0 / static_cast<double>(rows + cols)), seed);
}

}  // namespace mtdlift::nn
