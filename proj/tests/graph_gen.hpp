#pragma once

// Randomized graph generator that builds the same computation twice: once on
// the library tape (float32, reverse mode) and once as an oracle expression
// tree (double, finite differences). Op choices keep inputs away from kinks
// (relu/abs/clamp boundaries) so central differences are valid.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "nerfmark/nn.hpp"
#include "nerfmark/tensor.hpp"
#include "oracle.hpp"

namespace testgen {

struct GNode {
  nerfmark::Tensor t;
  oracle::NodePtr o;
};

struct FdReport {
  double max_rel_err = 0.0;
  int graphs = 0;
  int params_checked = 0;
  std::map<std::string, int> op_counts;
};

class GraphGen {
 public:
  GraphGen(nerfmark::Rng& rng, FdReport& report) : rng_(rng), report_(report) {}

  // Builds a random graph; returns scalar root and the leaf list.
  GNode build(std::vector<GNode>& leaves_out,
              std::map<int, std::vector<double>>& leaf_vals) {
    nodes_.clear();
    leaf_vals.clear();
    int n_leaves = 3 + static_cast<int>(rng_.uniform_int(3));
    static const std::vector<nerfmark::Shape> kShapes = {
        {2, 3}, {3, 4}, {4, 2}, {3, 3}, {2, 2, 3}, {5}, {2, 1, 3}};
    for (int i = 0; i < n_leaves; ++i) {
      nerfmark::Shape s = kShapes[static_cast<size_t>(rng_.uniform_int(
          static_cast<int64_t>(kShapes.size())))];
      std::vector<float> vals(static_cast<size_t>(nerfmark::shape_numel(s)));
      std::vector<double> dvals(vals.size());
      for (size_t j = 0; j < vals.size(); ++j) {
        // magnitude in [0.25, 1.25], random sign: away from 0
        float v = rng_.uniformf(0.25f, 1.25f) * (rng_.bernoulli() ? 1.0f : -1.0f);
        vals[j] = v;
        dvals[j] = static_cast<double>(v);
      }
      nerfmark::Tensor t = nerfmark::Tensor::from_vector(s, vals, /*requires_grad=*/true);
      leaf_vals[i] = dvals;
      GNode g{t, oracle::leaf(s, i)};
      nodes_.push_back(g);
      leaves_out.push_back(g);
    }
    int n_ops = 6 + static_cast<int>(rng_.uniform_int(8));
    for (int i = 0; i < n_ops; ++i) apply_random_op();
    // final scalar pulls on every node so each recorded op gets a backward pass
    GNode root{nerfmark::mean(nodes_.back().t),
               oracle::reduce(oracle::Op::Mean, nodes_.back().o)};
    count("mean");
    for (size_t i = 0; i + 1 < nodes_.size(); ++i) {
      bool use_sum = (i % 2 == 0);
      GNode red = use_sum
                      ? GNode{nerfmark::sum(nodes_[i].t),
                              oracle::reduce(oracle::Op::Sum, nodes_[i].o)}
                      : GNode{nerfmark::mean(nodes_[i].t),
                              oracle::reduce(oracle::Op::Mean, nodes_[i].o)};
      count(use_sum ? "sum" : "mean");
      GNode term{red.t * 0.1f,
                 oracle::binary(oracle::Op::Mul, red.o, constant(0.1))};
      root = {root.t + term.t, oracle::binary(oracle::Op::Add, root.o, term.o)};
    }
    return root;
  }

 private:
  nerfmark::Rng& rng_;
  FdReport& report_;
  std::vector<GNode> nodes_;

  void count(const std::string& name) { report_.op_counts[name]++; }

  const GNode& pick() {
    return nodes_[static_cast<size_t>(rng_.uniform_int(
        static_cast<int64_t>(nodes_.size())))];
  }

  static bool away_from(const nerfmark::Tensor& t, float point, float margin) {
    for (float v : t.values())
      if (std::abs(v - point) < margin) return false;
    return true;
  }

  static bool max_abs_below(const nerfmark::Tensor& t, float cap) {
    for (float v : t.values())
      if (std::abs(v) > cap) return false;
    return true;
  }

  void push(nerfmark::Tensor t, oracle::NodePtr o) {
    // keep magnitudes bounded so exp/softplus stay in range
    if (!max_abs_below(t, 4.0f)) {
      t = t * 0.25f;
      o = oracle::binary(oracle::Op::Mul, o, constant(0.25));
    }
    nodes_.push_back({std::move(t), std::move(o)});
  }

  oracle::NodePtr constant(double v) {
    static int next_const_id = 100000;
    // constants are modeled as leaves the FD loop never perturbs
    auto n = oracle::leaf({1}, next_const_id);
    const_vals_[next_const_id] = {v};
    ++next_const_id;
    return n;
  }

 public:
  std::map<int, std::vector<double>> const_vals_;

 private:
  void apply_random_op() {
    using nerfmark::Tensor;
    int choice = static_cast<int>(rng_.uniform_int(18));
    const GNode a = pick();
    switch (choice) {
      case 0: {  // add
        const GNode b = pick();
        if (!bcast_ok(a, b)) return;
        push(a.t + b.t, oracle::binary(oracle::Op::Add, a.o, b.o));
        count("add");
        break;
      }
      case 1: {  // sub
        const GNode b = pick();
        if (!bcast_ok(a, b)) return;
        push(a.t - b.t, oracle::binary(oracle::Op::Sub, a.o, b.o));
        count("sub");
        break;
      }
      case 2: {  // mul
        const GNode b = pick();
        if (!bcast_ok(a, b)) return;
        push(a.t * b.t, oracle::binary(oracle::Op::Mul, a.o, b.o));
        count("mul");
        break;
      }
      case 3: {  // div, denominator bounded away from zero: b -> abs(b) + 0.5
        const GNode b = pick();
        if (!bcast_ok(a, b)) return;
        auto safe_t = nerfmark::abs(b.t) + 0.5f;
        auto safe_o = oracle::binary(oracle::Op::Add, oracle::unary(oracle::Op::Abs, b.o),
                                     constant(0.5));
        if (!away_from(b.t, 0.0f, 0.02f)) return;  // abs kink
        push(a.t / safe_t, oracle::binary(oracle::Op::Div, a.o, safe_o));
        count("div");
        break;
      }
      case 4: {  // matmul over 2-D nodes
        std::vector<const GNode*> lhs;
        for (const auto& n : nodes_)
          if (n.t.rank() == 2) lhs.push_back(&n);
        if (lhs.empty()) return;
        const GNode* x = lhs[static_cast<size_t>(rng_.uniform_int(
            static_cast<int64_t>(lhs.size())))];
        std::vector<const GNode*> rhs;
        for (const auto& n : nodes_)
          if (n.t.rank() == 2 && n.t.dim(0) == x->t.dim(1)) rhs.push_back(&n);
        if (rhs.empty()) return;
        const GNode* y = rhs[static_cast<size_t>(rng_.uniform_int(
            static_cast<int64_t>(rhs.size())))];
        push(nerfmark::matmul(x->t, y->t), oracle::binary(oracle::Op::MatMul, x->o, y->o));
        count("matmul");
        break;
      }
      case 5:
        push(nerfmark::exp(a.t * 0.5f),
             oracle::unary(oracle::Op::Exp,
                           oracle::binary(oracle::Op::Mul, a.o, constant(0.5))));
        count("exp");
        break;
      case 6: {  // log of abs(x) + 0.5
        if (!away_from(a.t, 0.0f, 0.02f)) return;
        auto safe_t = nerfmark::abs(a.t) + 0.5f;
        auto safe_o = oracle::binary(oracle::Op::Add, oracle::unary(oracle::Op::Abs, a.o),
                                     constant(0.5));
        push(nerfmark::log(safe_t), oracle::unary(oracle::Op::Log, safe_o));
        count("log");
        break;
      }
      case 7:
        push(nerfmark::sigmoid(a.t), oracle::unary(oracle::Op::Sigmoid, a.o));
        count("sigmoid");
        break;
      case 8:
        if (!away_from(a.t, 0.0f, 0.02f)) return;
        push(nerfmark::relu(a.t), oracle::unary(oracle::Op::Relu, a.o));
        count("relu");
        break;
      case 9:
        push(nerfmark::sin(a.t), oracle::unary(oracle::Op::Sin, a.o));
        count("sin");
        break;
      case 10:
        push(nerfmark::cos(a.t), oracle::unary(oracle::Op::Cos, a.o));
        count("cos");
        break;
      case 11: {  // clamp with margins
        if (!away_from(a.t, -0.8f, 0.02f) || !away_from(a.t, 0.8f, 0.02f)) return;
        push(nerfmark::clamp(a.t, -0.8f, 0.8f), oracle::clampn(a.o, -0.8, 0.8));
        count("clamp");
        break;
      }
      case 12: {  // sum over an axis (keepdim) to stay broadcast-friendly
        int axis = static_cast<int>(rng_.uniform_int(a.t.rank()));
        push(nerfmark::sum_axis(a.t, axis, true), oracle::sum_axis(a.o, axis, true));
        count("sum_axis");
        break;
      }
      case 13: {  // reshape flat
        push(nerfmark::reshape(a.t, {a.t.numel()}), oracle::reshape(a.o, {a.t.numel()}));
        count("reshape");
        break;
      }
      case 14: {  // slice along axis 0
        int64_t d0 = a.t.dim(0);
        if (d0 < 2) return;
        int64_t len = 1 + rng_.uniform_int(d0 - 1);
        int64_t start = rng_.uniform_int(d0 - len + 1);
        push(nerfmark::slice(a.t, 0, start, len), oracle::slice(a.o, 0, start, len));
        count("slice");
        break;
      }
      case 15: {  // concat with itself along last axis
        int axis = a.t.rank() - 1;
        push(nerfmark::concat({a.t, a.t}, axis), oracle::concat({a.o, a.o}, axis));
        count("concat");
        break;
      }
      case 16: {  // softplus / tanh / square family
        int pick3 = static_cast<int>(rng_.uniform_int(3));
        if (pick3 == 0) {
          push(nerfmark::softplus(a.t), oracle::unary(oracle::Op::Softplus, a.o));
          count("softplus");
        } else if (pick3 == 1) {
          push(nerfmark::tanh(a.t), oracle::unary(oracle::Op::Tanh, a.o));
          count("tanh");
        } else {
          push(nerfmark::square(a.t), oracle::unary(oracle::Op::Square, a.o));
          count("square");
        }
        break;
      }
      case 17: {  // cumsum_exclusive or permute
        if (rng_.bernoulli()) {
          push(nerfmark::cumsum_exclusive(a.t), oracle::cumsum_excl(a.o));
          count("cumsum_exclusive");
        } else {
          std::vector<int> perm(static_cast<size_t>(a.t.rank()));
          for (int i = 0; i < a.t.rank(); ++i) perm[static_cast<size_t>(i)] = i;
          for (int i = a.t.rank() - 1; i > 0; --i)
            std::swap(perm[static_cast<size_t>(i)],
                      perm[static_cast<size_t>(rng_.uniform_int(i + 1))]);
          push(nerfmark::permute(a.t, perm), oracle::permute(a.o, perm));
          count("permute");
        }
        break;
      }
      default:
        break;
    }
  }

  static bool bcast_ok(const GNode& a, const GNode& b) {
    size_t r = std::max(a.t.shape().size(), b.t.shape().size());
    for (size_t i = 0; i < r; ++i) {
      int64_t da = i < r - a.t.shape().size() ? 1 : a.t.shape()[i - (r - a.t.shape().size())];
      int64_t db = i < r - b.t.shape().size() ? 1 : b.t.shape()[i - (r - b.t.shape().size())];
      if (!(da == db || da == 1 || db == 1)) return false;
    }
    return true;
  }
};

// Runs the full randomized FD sweep; the caller asserts on the report.
inline FdReport run_fd_sweep(uint64_t seed, int n_graphs) {
  nerfmark::Rng rng(seed);
  FdReport rep;
  for (int g = 0; g < n_graphs; ++g) {
    GraphGen gen(rng, rep);
    std::vector<GNode> leaves;
    std::map<int, std::vector<double>> leaf_vals;
    GNode root = gen.build(leaves, leaf_vals);
    nerfmark::backward(root.t);

    for (auto& [id, v] : gen.const_vals_) leaf_vals[id] = v;
    oracle::Evaluator ev(leaf_vals);
    double engine_val = root.t.item();
    double oracle_val = ev.eval_scalar(root.o);
    double val_err = std::abs(engine_val - oracle_val) /
                     std::max({std::abs(oracle_val), 1e-3});
    if (val_err > 1e-4) rep.max_rel_err = std::max(rep.max_rel_err, val_err);

    for (size_t li = 0; li < leaves.size(); ++li) {
      const GNode& leaf = leaves[li];
      if (!leaf.t.has_grad()) continue;  // leaf unused in this graph
      const auto& grad = leaf.t.grad();
      for (size_t e = 0; e < grad.size(); ++e) {
        double fd = oracle::fd_grad(ev, root.o, static_cast<int>(li), e);
        double ad = static_cast<double>(grad[e]);
        double denom = std::max({std::abs(fd), std::abs(ad), 1e-2});
        double rel = std::abs(fd - ad) / denom;
        rep.max_rel_err = std::max(rep.max_rel_err, rel);
        ++rep.params_checked;
      }
    }
    ++rep.graphs;
  }
  return rep;
}

}  // namespace testgen
