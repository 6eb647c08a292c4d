#pragma once

// Stacked bidirectional LSTM / GRU with exact backpropagation through time.
//
// Gate layouts follow the common convention:
//   LSTM: [input, forget, cell, output]
//   GRU:  [reset, update, new],  n = tanh(x W_n + b_in + r * (h U_n + b_hn))

#include "scantalk/nn.hpp"

#include <string_view>

namespace scantalk {

enum class CellType { lstm, gru };

inline std::string_view to_string(CellType c) { return c == CellType::lstm ? "lstm" : "gru"; }

inline CellType parse_cell(std::string_view s) {
  if (s == "lstm") return CellType::lstm;
  if (s == "gru") return CellType::gru;
  throw UsageError("unknown recurrent cell '" + std::string(s) + "' (expected lstm or gru)");
}

inline int gate_count(CellType c) { return c == CellType::lstm ? 4 : 3; }

struct RecurrentDirection {
  Matrix w_input;   // in x G*H
  Matrix w_hidden;  // H x G*H
  Matrix b_input;   // 1 x G*H
  Matrix b_hidden;  // 1 x G*H

  static RecurrentDirection make(Eigen::Index in, Eigen::Index hidden, CellType cell, nn::Rng& rng) {
    const auto gh = gate_count(cell) * hidden;
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    return {nn::uniform(in, gh, bound, rng), nn::uniform(hidden, gh, bound, rng), Matrix::Zero(1, gh), Matrix::Zero(1, gh)};
  }

  Eigen::Index hidden() const { return w_hidden.rows(); }

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    fn(nn::join(prefix, "w_input"), w_input);
    fn(nn::join(prefix, "w_hidden"), w_hidden);
    fn(nn::join(prefix, "b_input"), b_input);
    fn(nn::join(prefix, "b_hidden"), b_hidden);
  }
};

struct RecurrentLayer {
  RecurrentDirection forward;
  RecurrentDirection backward;

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    forward.visit(nn::join(prefix, "fwd"), fn);
    backward.visit(nn::join(prefix, "bwd"), fn);
  }
};

inline constexpr int kDefaultRecurrentLayers = 3;

// Layers of bidirectional cells followed by a 2H -> out projection.
struct RecurrentParams {
  CellType cell = CellType::lstm;
  std::vector<RecurrentLayer> layers;
  nn::Linear projection;

  static RecurrentParams make(Eigen::Index in, Eigen::Index hidden, Eigen::Index out, int num_layers, CellType cell,
                              nn::Rng& rng) {
    RecurrentParams p;
    p.cell = cell;
    for (int l = 0; l < num_layers; ++l) {
      const auto layer_in = l == 0 ? in : 2 * hidden;
      RecurrentLayer layer;
      layer.forward = RecurrentDirection::make(layer_in, hidden, cell, rng);
      layer.backward = RecurrentDirection::make(layer_in, hidden, cell, rng);
      p.layers.push_back(std::move(layer));
    }
    p.projection = nn::Linear::make(2 * hidden, out, rng);
    return p;
  }

  Eigen::Index in() const { return layers.front().forward.w_input.rows(); }
  Eigen::Index hidden() const { return layers.front().forward.hidden(); }

  template <class F>
  void visit(const std::string& prefix, F&& fn) {
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].visit(nn::join(prefix, "layer" + std::to_string(l)), fn);
    projection.visit(nn::join(prefix, "projection"), fn);
  }
};

// ---------------------------------------------------------------------------

struct DirectionCache {
  Matrix input;   // T x in
  Matrix gates;   // T x G*H, post-activation
  Matrix h;       // T x H (time order of the input)
  Matrix c;       // LSTM cell state T x H
  Matrix hidden_new;  // GRU: h U_n + b_hn, T x H
};

namespace detail {

inline void check_finite_row(const Eigen::Ref<const Eigen::RowVectorXd>& v, std::size_t layer, Eigen::Index t) {
  if (!v.allFinite()) throw_numerical("recurrent: non-finite activation at layer ", layer, ", frame ", t);
}

// Runs one direction; `reverse` walks t = T-1 .. 0. Output rows stay in input time order.
inline Matrix run_direction(const Matrix& X, const RecurrentDirection& p, CellType cell, bool reverse, std::size_t layer,
                            DirectionCache* cache) {
  const Eigen::Index T = X.rows(), H = p.hidden();
  Matrix xw = X * p.w_input;
  xw.rowwise() += p.b_input.row(0);
  Matrix out(T, H);
  DirectionCache local;
  auto& k = cache ? *cache : local;
  k.input = X;
  k.gates.resize(T, gate_count(cell) * H);
  k.h.resize(T, H);
  if (cell == CellType::lstm) k.c.resize(T, H);
  if (cell == CellType::gru) k.hidden_new.resize(T, H);

  Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(H), c = Eigen::RowVectorXd::Zero(H);
  for (Eigen::Index s = 0; s < T; ++s) {
    const Eigen::Index t = reverse ? T - 1 - s : s;
    Eigen::RowVectorXd hw = h * p.w_hidden + p.b_hidden.row(0);
    if (cell == CellType::lstm) {
      Eigen::RowVectorXd a = xw.row(t) + hw;
      for (Eigen::Index j = 0; j < H; ++j) {
        a[j] = nn::sigmoid(a[j]);
        a[H + j] = nn::sigmoid(a[H + j]);
        a[2 * H + j] = std::tanh(a[2 * H + j]);
        a[3 * H + j] = nn::sigmoid(a[3 * H + j]);
      }
      c = a.segment(H, H).cwiseProduct(c) + a.segment(0, H).cwiseProduct(a.segment(2 * H, H));
      h = a.segment(3 * H, H).cwiseProduct(c.array().tanh().matrix());
      k.gates.row(t) = a;
      k.c.row(t) = c;
    } else {
      Eigen::RowVectorXd g(3 * H);
      for (Eigen::Index j = 0; j < H; ++j) {
        g[j] = nn::sigmoid(xw(t, j) + hw[j]);
        g[H + j] = nn::sigmoid(xw(t, H + j) + hw[H + j]);
        g[2 * H + j] = std::tanh(xw(t, 2 * H + j) + g[j] * hw[2 * H + j]);
      }
      k.hidden_new.row(t) = hw.segment(2 * H, H);
      h = (1.0 - g.segment(H, H).array()).matrix().cwiseProduct(g.segment(2 * H, H)) + g.segment(H, H).cwiseProduct(h);
      k.gates.row(t) = g;
    }
    check_finite_row(h, layer, t);
    k.h.row(t) = h;
    out.row(t) = h;
  }
  return out;
}

inline Matrix backprop_direction(const Matrix& d_out, const RecurrentDirection& p, CellType cell, bool reverse,
                                 const DirectionCache& k, RecurrentDirection& g) {
  const Eigen::Index T = d_out.rows(), H = p.hidden();
  Matrix d_xw(T, gate_count(cell) * H);
  Eigen::RowVectorXd dh_next = Eigen::RowVectorXd::Zero(H), dc_next = Eigen::RowVectorXd::Zero(H);
  for (Eigen::Index s = T; s-- > 0;) {
    const Eigen::Index t = reverse ? T - 1 - s : s;
    const bool first = s == 0;
    const Eigen::Index prev = reverse ? t + 1 : t - 1;
    const Eigen::RowVectorXd h_prev = first ? Eigen::RowVectorXd::Zero(H) : Eigen::RowVectorXd(k.h.row(prev));
    Eigen::RowVectorXd dh = d_out.row(t) + dh_next;
    Eigen::RowVectorXd da(gate_count(cell) * H);
    Eigen::RowVectorXd dhw(gate_count(cell) * H);
    if (cell == CellType::lstm) {
      const auto a = k.gates.row(t);
      const Eigen::RowVectorXd c_prev = first ? Eigen::RowVectorXd::Zero(H) : Eigen::RowVectorXd(k.c.row(prev));
      const Eigen::RowVectorXd tc = k.c.row(t).array().tanh().matrix();
      Eigen::RowVectorXd dc = dc_next;
      for (Eigen::Index j = 0; j < H; ++j) {
        const double i = a[j], f = a[H + j], gg = a[2 * H + j], o = a[3 * H + j];
        dc[j] += dh[j] * o * (1 - tc[j] * tc[j]);
        da[j] = dc[j] * gg * i * (1 - i);
        da[H + j] = dc[j] * c_prev[j] * f * (1 - f);
        da[2 * H + j] = dc[j] * i * (1 - gg * gg);
        da[3 * H + j] = dh[j] * tc[j] * o * (1 - o);
        dc[j] *= f;
      }
      dc_next = dc;
      dhw = da;
    } else {
      const auto gt = k.gates.row(t);
      Eigen::RowVectorXd dh_prev(H);
      for (Eigen::Index j = 0; j < H; ++j) {
        const double r = gt[j], z = gt[H + j], n = gt[2 * H + j];
        const double dn = dh[j] * (1 - z);
        const double dz = dh[j] * (h_prev[j] - n);
        dh_prev[j] = dh[j] * z;
        const double dan = dn * (1 - n * n);
        const double dr = dan * k.hidden_new(t, j);
        da[j] = dr * r * (1 - r);
        da[H + j] = dz * z * (1 - z);
        da[2 * H + j] = dan;
        dhw[j] = da[j];
        dhw[H + j] = da[H + j];
        dhw[2 * H + j] = dan * r;
      }
      dc_next = dh_prev;  // carries the direct z * h path
    }
    d_xw.row(t) = da;
    g.w_hidden.noalias() += h_prev.transpose() * dhw;
    g.b_hidden.row(0) += dhw;
    dh_next = dhw * p.w_hidden.transpose();
    if (cell == CellType::gru) dh_next += dc_next;
  }
  g.w_input.noalias() += k.input.transpose() * d_xw;
  g.b_input += d_xw.colwise().sum();
  return d_xw * p.w_input.transpose();
}

}  // namespace detail

struct RecurrentCache {
  std::vector<DirectionCache> fwd, bwd;
  Matrix last_output;  // T x 2H
};

// a: T x in  ->  v: T x out
inline Matrix recurrent_forward(const Matrix& a, const RecurrentParams& p, RecurrentCache* cache = nullptr) {
  if (a.rows() < 1) throw_data("recurrent: empty sequence");
  if (a.cols() != p.in()) throw_data("recurrent: input has ", a.cols(), " columns, expected ", p.in());
  if (cache) {
    cache->fwd.resize(p.layers.size());
    cache->bwd.resize(p.layers.size());
  }
  Matrix x = a;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const Matrix hf = detail::run_direction(x, p.layers[l].forward, p.cell, false, l, cache ? &cache->fwd[l] : nullptr);
    const Matrix hb = detail::run_direction(x, p.layers[l].backward, p.cell, true, l, cache ? &cache->bwd[l] : nullptr);
    x.resize(a.rows(), hf.cols() + hb.cols());
    x << hf, hb;
  }
  if (cache) cache->last_output = x;
  return p.projection.forward(x);
}

inline Matrix recurrent_backward(const Matrix& dv, const RecurrentParams& p, const RecurrentCache& k, RecurrentParams& g) {
  Matrix dx = p.projection.backward(k.last_output, dv, g.projection);
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const auto H = p.layers[l].forward.hidden();
    const Matrix d_in_f = detail::backprop_direction(dx.leftCols(H), p.layers[l].forward, p.cell, false, k.fwd[l], g.layers[l].forward);
    const Matrix d_in_b = detail::backprop_direction(dx.rightCols(H), p.layers[l].backward, p.cell, true, k.bwd[l], g.layers[l].backward);
    dx = d_in_f + d_in_b;
  }
  return dx;
}

}  // namespace scantalk
