#include "cse/graph.hpp"

#include <cmath>
#include <limits>

namespace cse::ag {

namespace {
constexpr double kMaskOffset = -1e9;

void check_same_graph(const Var& a, const Var& b) {
  if (a.graph() != b.graph())
    throw std::logic_error("ag: operands belong to different graphs");
}

void accum(Node* n, const Mat& g) { ensure_grad(n) += g; }
}  // namespace

Mat& ensure_grad(Node* n) {
  if (n->grad.size() == 0)
    n->grad = Mat::Zero(n->value.rows(), n->value.cols());
  return n->grad;
}

Var Graph::make(Mat value, bool needs_grad) {
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  node->needs_grad = needs_grad && grad_enabled_;
  Node* raw = node.get();
  tape_.push_back(std::move(node));
  return Var(raw, this);
}

Var Graph::input(Mat m) { return make(std::move(m), false); }

Var Graph::param(Param& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var(it->second, this);
  Var v = make(p.value, true);
  param_nodes_[&p] = v.node();
  if (v.node()->needs_grad) {
    Node* n = v.node();
    Param* pp = &p;
    n->backprop = [n, pp]() {
      if (n->grad.size() != 0) pp->grad += n->grad;
    };
  }
  return v;
}

void Graph::backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1)
    throw std::logic_error("ag: backward target must be 1x1");
  if (!grad_enabled_)
    throw std::logic_error("ag: backward on a grad-disabled graph");
  ensure_grad(loss.node())(0, 0) = 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    Node* n = it->get();
    if (n->backprop && n->grad.size() != 0) n->backprop();
  }
}

namespace {

// Builds the result node and wires the backward closure only when a parent
// needs gradient.
Var unary(const Var& a, Mat value, std::function<void(Node*, Node*)> back) {
  Graph* g = a.graph();
  Var out = g->make(std::move(value), a.node()->needs_grad);
  if (out.node()->needs_grad) {
    Node* on = out.node();
    Node* an = a.node();
    on->backprop = [on, an, back]() { back(on, an); };
  }
  return out;
}

Var binary(const Var& a, const Var& b, Mat value,
           std::function<void(Node*, Node*, Node*)> back) {
  check_same_graph(a, b);
  Graph* g = a.graph();
  bool ng = a.node()->needs_grad || b.node()->needs_grad;
  Var out = g->make(std::move(value), ng);
  if (out.node()->needs_grad) {
    Node* on = out.node();
    Node* an = a.node();
    Node* bn = b.node();
    on->backprop = [on, an, bn, back]() { back(on, an, bn); };
  }
  return out;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::logic_error("ag::add: shape mismatch");
  return binary(a, b, a.value() + b.value(), [](Node* o, Node* an, Node* bn) {
    if (an->needs_grad) accum(an, o->grad);
    if (bn->needs_grad) accum(bn, o->grad);
  });
}

Var add_rowvec(const Var& a, const Var& b) {
  if (b.rows() != 1 || b.cols() != a.cols())
    throw std::logic_error("ag::add_rowvec: b must be 1 x cols(a)");
  Mat v = a.value().rowwise() + b.value().row(0);
  return binary(a, b, std::move(v), [](Node* o, Node* an, Node* bn) {
    if (an->needs_grad) accum(an, o->grad);
    if (bn->needs_grad) accum(bn, o->grad.colwise().sum());
  });
}

Var sub(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::logic_error("ag::sub: shape mismatch");
  return binary(a, b, a.value() - b.value(), [](Node* o, Node* an, Node* bn) {
    if (an->needs_grad) accum(an, o->grad);
    if (bn->needs_grad) accum(bn, -o->grad);
  });
}

Var mul(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::logic_error("ag::mul: shape mismatch");
  return binary(a, b, a.value().cwiseProduct(b.value()),
                [](Node* o, Node* an, Node* bn) {
                  if (an->needs_grad) accum(an, o->grad.cwiseProduct(bn->value));
                  if (bn->needs_grad) accum(bn, o->grad.cwiseProduct(an->value));
                });
}

Var mul_scalar(const Var& a, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1)
    throw std::logic_error("ag::mul_scalar: s must be 1x1");
  return binary(a, s, a.value() * s.value()(0, 0),
                [](Node* o, Node* an, Node* sn) {
                  if (an->needs_grad) accum(an, o->grad * sn->value(0, 0));
                  if (sn->needs_grad)
                    ensure_grad(sn)(0, 0) +=
                        (o->grad.array() * an->value.array()).sum();
                });
}

Var scale(const Var& a, double s) {
  return unary(a, a.value() * s, [s](Node* o, Node* an) {
    accum(an, o->grad * s);
  });
}

Var affine(const Var& a, double alpha, double beta) {
  Mat v = (a.value().array() * alpha + beta).matrix();
  return unary(a, std::move(v), [alpha](Node* o, Node* an) {
    accum(an, o->grad * alpha);
  });
}

Var one_minus(const Var& a) { return affine(a, -1.0, 1.0); }

Var transpose(const Var& a) {
  return unary(a, a.value().transpose(), [](Node* o, Node* an) {
    accum(an, o->grad.transpose());
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows())
    throw std::logic_error("ag::matmul: inner dimensions disagree");
  return binary(a, b, a.value() * b.value(), [](Node* o, Node* an, Node* bn) {
    if (an->needs_grad) accum(an, o->grad * bn->value.transpose());
    if (bn->needs_grad) accum(bn, an->value.transpose() * o->grad);
  });
}

Var concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::logic_error("ag::concat_cols: empty input");
  Eigen::Index rows = xs[0].rows(), cols = 0;
  bool ng = false;
  for (const auto& x : xs) {
    if (x.rows() != rows)
      throw std::logic_error("ag::concat_cols: row mismatch");
    cols += x.cols();
    ng = ng || x.node()->needs_grad;
  }
  Mat v(rows, cols);
  Eigen::Index c = 0;
  for (const auto& x : xs) {
    v.middleCols(c, x.cols()) = x.value();
    c += x.cols();
  }
  Graph* g = xs[0].graph();
  Var out = g->make(std::move(v), ng);
  if (out.node()->needs_grad) {
    Node* on = out.node();
    std::vector<Node*> parents;
    for (const auto& x : xs) parents.push_back(x.node());
    on->backprop = [on, parents]() {
      Eigen::Index c = 0;
      for (Node* p : parents) {
        if (p->needs_grad) accum(p, on->grad.middleCols(c, p->value.cols()));
        c += p->value.cols();
      }
    };
  }
  return out;
}

Var concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::logic_error("ag::concat_rows: empty input");
  Eigen::Index cols = xs[0].cols(), rows = 0;
  bool ng = false;
  for (const auto& x : xs) {
    if (x.cols() != cols)
      throw std::logic_error("ag::concat_rows: column mismatch");
    rows += x.rows();
    ng = ng || x.node()->needs_grad;
  }
  Mat v(rows, cols);
  Eigen::Index r = 0;
  for (const auto& x : xs) {
    v.middleRows(r, x.rows()) = x.value();
    r += x.rows();
  }
  Graph* g = xs[0].graph();
  Var out = g->make(std::move(v), ng);
  if (out.node()->needs_grad) {
    Node* on = out.node();
    std::vector<Node*> parents;
    for (const auto& x : xs) parents.push_back(x.node());
    on->backprop = [on, parents]() {
      Eigen::Index r = 0;
      for (Node* p : parents) {
        if (p->needs_grad) accum(p, on->grad.middleRows(r, p->value.rows()));
        r += p->value.rows();
      }
    };
  }
  return out;
}

Var slice_cols(const Var& a, Eigen::Index c0, Eigen::Index n) {
  if (c0 < 0 || c0 + n > a.cols())
    throw std::logic_error("ag::slice_cols: out of range");
  return unary(a, a.value().middleCols(c0, n), [c0, n](Node* o, Node* an) {
    ensure_grad(an).middleCols(c0, n) += o->grad;
  });
}

Var slice_rows(const Var& a, Eigen::Index r0, Eigen::Index n) {
  if (r0 < 0 || r0 + n > a.rows())
    throw std::logic_error("ag::slice_rows: out of range");
  return unary(a, a.value().middleRows(r0, n), [r0, n](Node* o, Node* an) {
    ensure_grad(an).middleRows(r0, n) += o->grad;
  });
}

Var gather_rows(const Var& a, const std::vector<int>& idx) {
  Mat v(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows())
      throw std::logic_error("ag::gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  return unary(a, std::move(v), [idx](Node* o, Node* an) {
    Mat& g = ensure_grad(an);
    for (std::size_t i = 0; i < idx.size(); ++i)
      g.row(idx[i]) += o->grad.row(static_cast<Eigen::Index>(i));
  });
}

Var repeat_rows(const Var& a, Eigen::Index n) {
  if (a.rows() != 1) throw std::logic_error("ag::repeat_rows: a must be 1xC");
  Mat v = a.value().replicate(n, 1);
  return unary(a, std::move(v), [](Node* o, Node* an) {
    accum(an, o->grad.colwise().sum());
  });
}

Var gather_entries(const Var& a, const std::vector<int>& rows,
                   const std::vector<int>& cols) {
  if (rows.size() != cols.size())
    throw std::logic_error("ag::gather_entries: index size mismatch");
  Mat v(static_cast<Eigen::Index>(rows.size()), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows() || cols[i] < 0 ||
        cols[i] >= a.cols())
      throw std::logic_error("ag::gather_entries: index out of range");
    v(static_cast<Eigen::Index>(i), 0) = a.value()(rows[i], cols[i]);
  }
  return unary(a, std::move(v), [rows, cols](Node* o, Node* an) {
    Mat& g = ensure_grad(an);
    for (std::size_t i = 0; i < rows.size(); ++i)
      g(rows[i], cols[i]) += o->grad(static_cast<Eigen::Index>(i), 0);
  });
}

Var scatter_sum_cols(const Var& a, const std::vector<int>& ids,
                     Eigen::Index width) {
  if (static_cast<Eigen::Index>(ids.size()) != a.cols())
    throw std::logic_error("ag::scatter_sum_cols: ids size != cols(a)");
  Mat v = Mat::Zero(a.rows(), width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= width)
      throw std::logic_error("ag::scatter_sum_cols: id out of range");
    v.col(ids[i]) += a.value().col(static_cast<Eigen::Index>(i));
  }
  return unary(a, std::move(v), [ids](Node* o, Node* an) {
    Mat& g = ensure_grad(an);
    for (std::size_t i = 0; i < ids.size(); ++i)
      g.col(static_cast<Eigen::Index>(i)) += o->grad.col(ids[i]);
  });
}

Var sigmoid(const Var& a) {
  Mat v = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
  });
  return unary(a, std::move(v), [](Node* o, Node* an) {
    Mat d = o->value.array() * (1.0 - o->value.array());
    accum(an, o->grad.cwiseProduct(d));
  });
}

Var tanh_v(const Var& a) {
  Mat v = a.value().array().tanh().matrix();
  return unary(a, std::move(v), [](Node* o, Node* an) {
    Mat d = 1.0 - o->value.array().square();
    accum(an, o->grad.cwiseProduct(d));
  });
}

Var gelu(const Var& a) {
  static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * 3.14159265358979323846);
  Mat v = a.value().unaryExpr([](double x) {
    return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  });
  return unary(a, std::move(v), [](Node* o, Node* an) {
    Mat d = an->value.unaryExpr([](double x) {
      double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      return cdf + x * pdf;
    });
    accum(an, o->grad.cwiseProduct(d));
  });
}

Var log_clamped(const Var& a, double floor) {
  Mat v = a.value().unaryExpr(
      [floor](double x) { return std::log(std::max(x, floor)); });
  return unary(a, std::move(v), [floor](Node* o, Node* an) {
    Mat d = an->value.unaryExpr(
        [floor](double x) { return x > floor ? 1.0 / x : 0.0; });
    accum(an, o->grad.cwiseProduct(d));
  });
}

Var dropout(const Var& a, double rate, std::mt19937_64* rng) {
  if (rate <= 0.0 || rng == nullptr) return a;
  if (rate >= 1.0) throw std::logic_error("ag::dropout: rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  Mat m(a.rows(), a.cols());
  const double s = 1.0 / (1.0 - rate);
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      m(r, c) = keep(*rng) ? s : 0.0;
  return mul(a, a.graph()->input(std::move(m)));
}

Var sum_all(const Var& a) {
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  return unary(a, std::move(v), [](Node* o, Node* an) {
    ensure_grad(an).array() += o->grad(0, 0);
  });
}

Var mean_all(const Var& a) {
  double n = static_cast<double>(a.value().size());
  Mat v(1, 1);
  v(0, 0) = a.value().sum() / n;
  return unary(a, std::move(v), [n](Node* o, Node* an) {
    ensure_grad(an).array() += o->grad(0, 0) / n;
  });
}

Var softmax_rows(const Var& a, const Mat* mask) {
  if (mask && (mask->rows() != a.rows() || mask->cols() != a.cols()))
    throw std::logic_error("ag::softmax_rows: mask shape mismatch");
  Mat logits = a.value();
  if (mask) logits += (mask->array() - 1.0).matrix() * (-kMaskOffset);
  Mat v(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    if (mask && mask->row(r).sum() == 0.0)
      throw std::invalid_argument("ag::softmax_rows: fully masked row");
    double m = logits.row(r).maxCoeff();
    Eigen::ArrayXd e = (logits.row(r).array() - m).exp();
    v.row(r) = (e / e.sum()).matrix();
  }
  return unary(a, std::move(v), [](Node* o, Node* an) {
    Mat d(o->value.rows(), o->value.cols());
    for (Eigen::Index r = 0; r < o->value.rows(); ++r) {
      double dot = o->grad.row(r).dot(o->value.row(r));
      d.row(r) =
          (o->value.row(r).array() * (o->grad.row(r).array() - dot)).matrix();
    }
    accum(an, d);
  });
}

Var normalize_rows(const Var& a) {
  Mat v(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    double s = a.value().row(r).sum();
    if (!(s > 0.0))
      throw std::invalid_argument("ag::normalize_rows: non-positive row sum");
    v.row(r) = a.value().row(r) / s;
  }
  return unary(a, std::move(v), [](Node* o, Node* an) {
    Mat d(o->value.rows(), o->value.cols());
    for (Eigen::Index r = 0; r < o->value.rows(); ++r) {
      double s = an->value.row(r).sum();
      double dot = o->grad.row(r).dot(o->value.row(r));
      d.row(r) = (o->grad.row(r).array() - dot) / s;
    }
    accum(an, d);
  });
}

Var maximum(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("ag::maximum: empty input");
  Eigen::Index rows = xs[0].rows(), cols = xs[0].cols();
  bool ng = false;
  for (const auto& x : xs) {
    if (x.rows() != rows || x.cols() != cols)
      throw std::logic_error("ag::maximum: shape mismatch");
    ng = ng || x.node()->needs_grad;
  }
  Mat v = xs[0].value();
  // which[r,c] = index of the first input attaining the max
  Eigen::MatrixXi which = Eigen::MatrixXi::Zero(rows, cols);
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const Mat& xi = xs[i].value();
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        if (xi(r, c) > v(r, c)) {
          v(r, c) = xi(r, c);
          which(r, c) = static_cast<int>(i);
        }
  }
  Graph* g = xs[0].graph();
  Var out = g->make(std::move(v), ng);
  if (out.node()->needs_grad) {
    Node* on = out.node();
    std::vector<Node*> parents;
    for (const auto& x : xs) parents.push_back(x.node());
    on->backprop = [on, parents, which]() {
      for (Eigen::Index r = 0; r < on->value.rows(); ++r)
        for (Eigen::Index c = 0; c < on->value.cols(); ++c) {
          Node* p = parents[static_cast<std::size_t>(which(r, c))];
          if (p->needs_grad) ensure_grad(p)(r, c) += on->grad(r, c);
        }
    };
  }
  return out;
}

Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps) {
  if (gain.rows() != 1 || gain.cols() != a.cols() || bias.rows() != 1 ||
      bias.cols() != a.cols())
    throw std::logic_error("ag::layer_norm: gain/bias must be 1 x cols(a)");
  check_same_graph(a, gain);
  check_same_graph(a, bias);
  Eigen::Index rows = a.rows(), cols = a.cols();
  Mat xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double mu = a.value().row(r).mean();
    double var = (a.value().row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (a.value().row(r).array() - mu).matrix() * inv_std(r);
  }
  Mat v = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  v.rowwise() += bias.value().row(0);
  bool ng = a.node()->needs_grad || gain.node()->needs_grad ||
            bias.node()->needs_grad;
  Graph* g = a.graph();
  Var out = g->make(std::move(v), ng);
  if (out.node()->needs_grad) {
    Node* on = out.node();
    Node* an = a.node();
    Node* gn = gain.node();
    Node* bn = bias.node();
    on->backprop = [on, an, gn, bn, xhat, inv_std]() {
      if (gn->needs_grad)
        accum(gn, (on->grad.array() * xhat.array()).colwise().sum().matrix());
      if (bn->needs_grad) accum(bn, on->grad.colwise().sum());
      if (an->needs_grad) {
        Mat d(on->grad.rows(), on->grad.cols());
        for (Eigen::Index r = 0; r < on->grad.rows(); ++r) {
          Eigen::ArrayXd h =
              on->grad.row(r).array() * gn->value.row(0).array();
          double mean_h = h.mean();
          double mean_hx = (h * xhat.row(r).transpose().array()).mean();
          d.row(r) = ((h - mean_h - xhat.row(r).transpose().array() * mean_hx) *
                      inv_std(r))
                         .matrix()
                         .transpose();
        }
        accum(an, d);
      }
    };
  }
  return out;
}

Var additive_scores(const Var& a, const Var& b, const Var& w) {
  if (a.cols() != b.cols() || w.cols() != 1 || w.rows() != a.cols())
    throw std::logic_error("ag::additive_scores: shape mismatch");
  check_same_graph(a, b);
  check_same_graph(a, w);
  Eigen::Index R = a.rows(), L = b.rows(), N = a.cols();
  Mat v(R, L);
  for (Eigen::Index r = 0; r < R; ++r)
    for (Eigen::Index l = 0; l < L; ++l) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < N; ++c)
        s += w.value()(c, 0) * std::tanh(a.value()(r, c) + b.value()(l, c));
      v(r, l) = s;
    }
  bool ng = a.node()->needs_grad || b.node()->needs_grad ||
            w.node()->needs_grad;
  Graph* g = a.graph();
  Var out = g->make(std::move(v), ng);
  if (out.node()->needs_grad) {
    Node* on = out.node();
    Node* an = a.node();
    Node* bn = b.node();
    Node* wn = w.node();
    on->backprop = [on, an, bn, wn]() {
      Eigen::Index R = an->value.rows(), L = bn->value.rows(),
                   N = an->value.cols();
      Mat da = Mat::Zero(R, N), db = Mat::Zero(L, N), dw = Mat::Zero(N, 1);
      for (Eigen::Index r = 0; r < R; ++r)
        for (Eigen::Index l = 0; l < L; ++l) {
          double go = on->grad(r, l);
          if (go == 0.0) continue;
          for (Eigen::Index c = 0; c < N; ++c) {
            double t = std::tanh(an->value(r, c) + bn->value(l, c));
            double dtan = go * wn->value(c, 0) * (1.0 - t * t);
            da(r, c) += dtan;
            db(l, c) += dtan;
            dw(c, 0) += go * t;
          }
        }
      if (an->needs_grad) accum(an, da);
      if (bn->needs_grad) accum(bn, db);
      if (wn->needs_grad) accum(wn, dw);
    };
  }
  return out;
}

}  // namespace cse::ag
