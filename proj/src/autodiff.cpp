#include "sinogan/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "sinogan/errors.hpp"

namespace sinogan::ad {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

Graph& same_graph(Var a, Var b) {
  if (&a.graph() != &b.graph()) throw ContractError("operands belong to different graphs");
  return a.graph();
}

// Rows index (channel, ky, kx); columns index output pixel (y, x).
void im2col3x3(const double* img, std::size_t channels, std::size_t h, std::size_t w, double* col) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = img + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* row = col + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + ky - 1;
          double* dst = row + y * w;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          const double* src = plane + sy * w;
          // dst[x] = src[x + kx - 1]
          if (kx == 0) {
            dst[0] = 0.0;
            std::copy(src, src + w - 1, dst + 1);
          } else if (kx == 1) {
            std::copy(src, src + w, dst);
          } else {
            std::copy(src + 1, src + w, dst);
            dst[w - 1] = 0.0;
          }
        }
      }
    }
  }
}

void col2im3x3_add(const double* col, std::size_t channels, std::size_t h, std::size_t w, double* img) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    double* plane = img + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* row = col + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + ky - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          const double* src = row + y * w;
          double* dst = plane + sy * w;
          if (kx == 0) {
            for (std::size_t x = 1; x < w; ++x) dst[x - 1] += src[x];
          } else if (kx == 1) {
            for (std::size_t x = 0; x < w; ++x) dst[x] += src[x];
          } else {
            for (std::size_t x = 0; x + 1 < w; ++x) dst[x + 1] += src[x];
          }
        }
      }
    }
  }
}

double stable_sigmoid(double x) {
  double s;
  if (x >= 0) {
    s = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    s = e / (1.0 + e);
  }
  // Keep the output strictly inside (0, 1) even where it rounds to an endpoint.
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  const double hi = std::nextafter(1.0, 0.0);
  return std::clamp(s, lo, hi);
}

}  // namespace

const Tensor& Var::value() const { return graph_->value(*this); }
bool Var::requires_grad() const { return graph_->requires_grad(*this); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Graph::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  bool needs = false;
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) throw ContractError("operation input refers to a later node");
    needs = needs || nodes_[in].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), std::move(inputs), needs ? std::move(backward) : BackwardFn{}, needs, {}});
  return Var(this, nodes_.size() - 1);
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.shape() == n.value.shape()) return n.grad;
  return Tensor(n.value.shape(), 0.0);
}

void Graph::backward(Var loss) {
  if (&loss.graph() != this) throw ContractError("backward: loss belongs to another graph");
  const Tensor& lv = value(loss);
  if (lv.numel() != 1) throw ContractError("backward: loss must be scalar, got " + shape_string(lv.shape()));
  require_finite(lv, "backward loss");

  for (Node& n : nodes_) n.grad = Tensor();
  Node& root = nodes_[loss.id()];
  if (!root.requires_grad) return;
  root.grad = Tensor(lv.shape(), 1.0);

  std::vector<Tensor*> grad_in;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    grad_in.assign(n.inputs.size(), nullptr);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      Node& in = nodes_[n.inputs[k]];
      if (!in.requires_grad) continue;
      if (in.grad.shape() != in.value.shape()) in.grad = Tensor(in.value.shape(), 0.0);
      grad_in[k] = &in.grad;
    }
    n.backward(*this, n.grad, grad_in);
  }
}

Var conv2d(Var input, Var kernel, Var bias) {
  Graph& g = same_graph(input, kernel);
  same_graph(input, bias);
  const Tensor& x = input.value();
  const Tensor& k = kernel.value();
  const Tensor& b = bias.value();
  require_rank(x, 4, "conv2d input");
  require_rank(k, 4, "conv2d kernel");
  require_rank(b, 1, "conv2d bias");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = k.dim(0);
  if (k.dim(1) != cin || k.dim(2) != 3 || k.dim(3) != 3) {
    throw DimensionError("conv2d: kernel " + shape_string(k.shape()) + " incompatible with input " +
                         shape_string(x.shape()));
  }
  if (b.dim(0) != cout) throw DimensionError("conv2d: bias length does not match output channels");

  const std::size_t hw = h * w;
  const std::size_t rows = cin * 9;
  Tensor out({batch, cout, h, w});
  AlignedBuffer col(rows * hw);
  CMapR kmat(k.data(), cout, rows);
  for (std::size_t n = 0; n < batch; ++n) {
    im2col3x3(x.data() + n * cin * hw, cin, h, w, col.data());
    MapR on(out.data() + n * cout * hw, cout, hw);
    on.noalias() = kmat * CMapR(col.data(), rows, hw);
    for (std::size_t c = 0; c < cout; ++c) on.row(c).array() += b[c];
  }

  const std::size_t xi = input.id(), ki = kernel.id();
  return g.record(std::move(out), {input.id(), kernel.id(), bias.id()},
                  [xi, ki, batch, cin, cout, h, w](const Graph& gr, const Tensor& gout, std::span<Tensor* const> gin) {
                    const Tensor& xv = gr.value_at(xi);
                    const Tensor& kv = gr.value_at(ki);
                    const std::size_t hw = h * w;
                    const std::size_t rows = cin * 9;
                    CMapR kmat(kv.data(), cout, rows);
                    AlignedBuffer col(rows * hw);
                    AlignedBuffer dcol;
                    if (gin[0]) dcol.resize(rows * hw);
                    for (std::size_t n = 0; n < batch; ++n) {
                      CMapR gn(gout.data() + n * cout * hw, cout, hw);
                      if (gin[1]) {
                        im2col3x3(xv.data() + n * cin * hw, cin, h, w, col.data());
                        MapR dk(gin[1]->data(), cout, rows);
                        dk.noalias() += gn * CMapR(col.data(), rows, hw).transpose();
                      }
                      if (gin[2]) {
                        Eigen::Map<Eigen::VectorXd> db(gin[2]->data(), cout);
                        db += gn.rowwise().sum();
                      }
                      if (gin[0]) {
                        MapR dc(dcol.data(), rows, hw);
                        dc.noalias() = kmat.transpose() * gn;
                        col2im3x3_add(dcol.data(), cin, h, w, gin[0]->data() + n * cin * hw);
                      }
                    }
                  });
}

Var maxpool2(Var input) {
  Graph& g = input.graph();
  const Tensor& x = input.value();
  require_rank(x, 4, "maxpool2");
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw DimensionError("maxpool2: odd spatial size " + shape_string(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({batch, ch, oh, ow});
  std::vector<std::uint32_t> argmax(out.numel());
  std::size_t o = 0;
  for (std::size_t p = 0; p < batch * ch; ++p) {
    const double* plane = x.data() + p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
        const std::size_t base = (2 * y) * w + 2 * xx;
        const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
        std::size_t best = cand[0];
        for (int k = 1; k < 4; ++k) {
          if (plane[cand[k]] > plane[best]) best = cand[k];
        }
        out[o] = plane[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  const std::size_t plane_in = h * w, plane_out = oh * ow;
  return g.record(std::move(out), {input.id()},
                  [argmax = std::move(argmax), plane_in, plane_out](const Graph&, const Tensor& gout,
                                                                    std::span<Tensor* const> gin) {
                    double* dx = gin[0]->data();
                    for (std::size_t i = 0; i < gout.numel(); ++i) {
                      const std::size_t p = i / plane_out;
                      dx[p * plane_in + argmax[i]] += gout[i];
                    }
                  });
}

Var upsample2(Var input) {
  Graph& g = input.graph();
  const Tensor& x = input.value();
  require_rank(x, 4, "upsample2");
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = 2 * h, ow = 2 * w;
  Tensor out({batch, ch, oh, ow});
  for (std::size_t p = 0; p < batch * ch; ++p) {
    const double* src = x.data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
    }
  }
  return g.record(std::move(out), {input.id()},
                  [batch, ch, h, w](const Graph&, const Tensor& gout, std::span<Tensor* const> gin) {
                    const std::size_t oh = 2 * h, ow = 2 * w;
                    for (std::size_t p = 0; p < batch * ch; ++p) {
                      const double* src = gout.data() + p * oh * ow;
                      double* dst = gin[0]->data() + p * h * w;
                      for (std::size_t y = 0; y < oh; ++y) {
                        for (std::size_t xx = 0; xx < ow; ++xx) dst[(y / 2) * w + xx / 2] += src[y * ow + xx];
                      }
                    }
                  });
}

Var concat_channels(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank(av, 4, "concat_channels");
  require_rank(bv, 4, "concat_channels");
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3)) {
    throw DimensionError("concat_channels: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  const std::size_t batch = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  const std::size_t hw = av.dim(2) * av.dim(3);
  Tensor out({batch, ca + cb, av.dim(2), av.dim(3)});
  for (std::size_t n = 0; n < batch; ++n) {
    double* dst = out.data() + n * (ca + cb) * hw;
    std::copy_n(av.data() + n * ca * hw, ca * hw, dst);
    std::copy_n(bv.data() + n * cb * hw, cb * hw, dst + ca * hw);
  }
  return g.record(std::move(out), {a.id(), b.id()},
                  [batch, ca, cb, hw](const Graph&, const Tensor& gout, std::span<Tensor* const> gin) {
                    for (std::size_t n = 0; n < batch; ++n) {
                      const double* src = gout.data() + n * (ca + cb) * hw;
                      if (gin[0]) {
                        double* d = gin[0]->data() + n * ca * hw;
                        for (std::size_t i = 0; i < ca * hw; ++i) d[i] += src[i];
                      }
                      if (gin[1]) {
                        double* d = gin[1]->data() + n * cb * hw;
                        for (std::size_t i = 0; i < cb * hw; ++i) d[i] += src[ca * hw + i];
                      }
                    }
                  });
}

Var dense(Var input, Var weight, Var bias) {
  Graph& g = same_graph(input, weight);
  same_graph(input, bias);
  const Tensor& x = input.value();
  const Tensor& wt = weight.value();
  const Tensor& b = bias.value();
  require_rank(x, 2, "dense input");
  require_rank(wt, 2, "dense weight");
  require_rank(b, 1, "dense bias");
  const std::size_t batch = x.dim(0), n = x.dim(1), m = wt.dim(0);
  if (wt.dim(1) != n || b.dim(0) != m) {
    throw DimensionError("dense: weight " + shape_string(wt.shape()) + " / bias " + shape_string(b.shape()) +
                         " incompatible with input " + shape_string(x.shape()));
  }
  Tensor out({batch, m});
  MapR o(out.data(), batch, m);
  o.noalias() = CMapR(x.data(), batch, n) * CMapR(wt.data(), m, n).transpose();
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), m);
  const std::size_t xi = input.id(), wi = weight.id();
  return g.record(std::move(out), {input.id(), weight.id(), bias.id()},
                  [xi, wi, batch, n, m](const Graph& gr, const Tensor& gout, std::span<Tensor* const> gin) {
                    CMapR go(gout.data(), batch, m);
                    if (gin[0]) {
                      MapR(gin[0]->data(), batch, n).noalias() += go * CMapR(gr.value_at(wi).data(), m, n);
                    }
                    if (gin[1]) {
                      MapR(gin[1]->data(), m, n).noalias() += go.transpose() * CMapR(gr.value_at(xi).data(), batch, n);
                    }
                    if (gin[2]) Eigen::Map<Eigen::RowVectorXd>(gin[2]->data(), m) += go.colwise().sum();
                  });
}

Var flatten(Var input) {
  const Tensor& x = input.value();
  if (x.rank() < 1) throw DimensionError("flatten: rank-0 tensor");
  const std::size_t batch = x.dim(0);
  const std::size_t rest = batch ? x.numel() / batch : 0;
  return input.graph().record(x.reshaped({batch, rest}), {input.id()},
                              [](const Graph&, const Tensor& gout, std::span<Tensor* const> gin) {
                                for (std::size_t i = 0; i < gout.numel(); ++i) (*gin[0])[i] += gout[i];
                              });
}

Var relu(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] > 0 ? xv[i] : 0.0;
  const std::size_t oi = x.graph().size();
  return x.graph().record(std::move(out), {x.id()},
                          [oi](const Graph& gr, const Tensor& gout, std::span<Tensor* const> gin) {
                            const Tensor& y = gr.value_at(oi);
                            for (std::size_t i = 0; i < gout.numel(); ++i) {
                              if (y[i] > 0) (*gin[0])[i] += gout[i];
                            }
                          });
}

Var sigmoid(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = stable_sigmoid(xv[i]);
  const std::size_t oi = x.graph().size();
  return x.graph().record(std::move(out), {x.id()},
                          [oi](const Graph& gr, const Tensor& gout, std::span<Tensor* const> gin) {
                            const Tensor& y = gr.value_at(oi);
                            for (std::size_t i = 0; i < gout.numel(); ++i) (*gin[0])[i] += gout[i] * y[i] * (1.0 - y[i]);
                          });
}

Var linear(Var x) {
  return x.graph().record(x.value(), {x.id()}, [](const Graph&, const Tensor& gout, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < gout.numel(); ++i) (*gin[0])[i] += gout[i];
  });
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return g.record(std::move(out), {a.id(), b.id()}, [](const Graph&, const Tensor& gout, std::span<Tensor* const> gin) {
    for (Tensor* t : gin) {
      if (!t) continue;
      for (std::size_t i = 0; i < gout.numel(); ++i) (*t)[i] += gout[i];
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return g.record(std::move(out), {ai, bi}, [ai, bi](const Graph& gr, const Tensor& gout, std::span<Tensor* const> gin) {
    const Tensor& av = gr.value_at(ai);
    const Tensor& bv = gr.value_at(bi);
    for (std::size_t i = 0; i < gout.numel(); ++i) {
      if (gin[0]) (*gin[0])[i] += gout[i] * bv[i];
      if (gin[1]) (*gin[1])[i] += gout[i] * av[i];
    }
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.values()) v *= factor;
  return x.graph().record(std::move(out), {x.id()},
                          [factor](const Graph&, const Tensor& gout, std::span<Tensor* const> gin) {
                            for (std::size_t i = 0; i < gout.numel(); ++i) (*gin[0])[i] += factor * gout[i];
                          });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.graph().record(Tensor::scalar(s), {x.id()}, [](const Graph&, const Tensor& gout, std::span<Tensor* const> gin) {
    const double g0 = gout[0];
    for (double& v : gin[0]->values()) v += g0;
  });
}

Var l1_loss(Var pred, Var target) {
  Graph& g = same_graph(pred, target);
  const Tensor& p = pred.value();
  const Tensor& t = target.value();
  require_same_shape(p, t, "l1_loss");
  const double count = static_cast<double>(p.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) s += std::abs(p[i] - t[i]);
  const std::size_t pi = pred.id(), ti = target.id();
  return g.record(Tensor::scalar(count > 0 ? s / count : 0.0), {pi, ti},
                  [pi, ti, count](const Graph& gr, const Tensor& gout, std::span<Tensor* const> gin) {
                    const Tensor& pv = gr.value_at(pi);
                    const Tensor& tv = gr.value_at(ti);
                    const double s = gout[0] / count;
                    for (std::size_t i = 0; i < pv.numel(); ++i) {
                      const double d = pv[i] - tv[i];
                      const double sg = d > 0 ? s : (d < 0 ? -s : 0.0);
                      if (gin[0]) (*gin[0])[i] += sg;
                      if (gin[1]) (*gin[1])[i] -= sg;
                    }
                  });
}

Var bce_loss(Var prob, Var label) {
  Graph& g = same_graph(prob, label);
  const Tensor& p = prob.value();
  const Tensor& y = label.value();
  require_same_shape(p, y, "bce_loss");
  const double count = static_cast<double>(p.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double pc = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
    s -= y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc);
  }
  const std::size_t pi = prob.id(), yi = label.id();
  // Gradient taken at the clamped probability.
  return g.record(Tensor::scalar(count > 0 ? s / count : 0.0), {pi, yi},
                  [pi, yi, count](const Graph& gr, const Tensor& gout, std::span<Tensor* const> gin) {
                    const Tensor& pv = gr.value_at(pi);
                    const Tensor& yv = gr.value_at(yi);
                    const double s = gout[0] / count;
                    for (std::size_t i = 0; i < pv.numel(); ++i) {
                      const double pc = std::clamp(pv[i], kProbClamp, 1.0 - kProbClamp);
                      if (gin[0]) (*gin[0])[i] += -s * (yv[i] / pc - (1.0 - yv[i]) / (1.0 - pc));
                      if (gin[1]) (*gin[1])[i] += -s * (std::log(pc) - std::log(1.0 - pc));
                    }
                  });
}

Var bce_loss(Var prob, double label) {
  Var y = prob.graph().constant(Tensor(prob.shape(), label));
  return bce_loss(prob, y);
}

}  // namespace sinogan::ad
