#include "dirgnn/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace dirgnn {

const char* group_name(GroupId id) {
  switch (id) {
    case GroupId::Generator: return "generator";
    case GroupId::Encoder: return "encoder";
    case GroupId::CausalHead: return "causal_head";
    case GroupId::SpuriousHead: return "spurious_head";
  }
  return "?";
}

GroupId group_from_name(const std::string& name) {
  for (auto g : {GroupId::Generator, GroupId::Encoder, GroupId::CausalHead, GroupId::SpuriousHead}) {
    if (name == group_name(g)) return g;
  }
  throw ValidationError("unknown parameter group '" + name + "'");
}

std::size_t ParamGroup::add(std::string name, Tensor value) {
  params.emplace_back(std::move(name), std::move(value));
  return params.size() - 1;
}

void ParamGroup::zero_grad() {
  for (auto& p : params) p.grad.fill(0.0);
}

bool ParamGroup::grad_is_zero() const {
  for (const auto& p : params) {
    for (double g : p.grad.values()) {
      if (g != 0.0) return false;
    }
  }
  return true;
}

std::size_t ParamGroup::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

}  // namespace dirgnn

namespace dirgnn::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Param: return "param";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Mul: return "elementwise-mul";
    case Op::ScalarMul: return "scalar-mul";
    case Op::Sigmoid: return "sigmoid";
    case Op::Relu: return "relu";
    case Op::RowGather: return "row-gather";
    case Op::ScatterAdd: return "scatter-add-by-index";
    case Op::RowSum: return "row-sum";
    case Op::MeanAll: return "mean-all";
    case Op::MeanRowsByGroup: return "mean-rows-by-group";
    case Op::Variance: return "variance-of-vector";
    case Op::ConcatRows: return "concat-rows";
    case Op::SoftmaxCrossEntropy: return "softmax-cross-entropy";
    case Op::Detach: return "detach";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_error(Op op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op_name(op)) + ": incompatible shapes " + a.shape_str() +
                       " and " + b.shape_str());
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_indices(Op op, const std::vector<Index>& idx, std::size_t bound) {
  for (Index i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= bound) {
      throw ContractError(std::string(op_name(op)) + ": index " + std::to_string(i) +
                          " out of range [0," + std::to_string(bound) + ")");
    }
  }
}

}  // namespace

Var Tape::push(TapeNode node) {
  if (node.op != Op::Constant && node.op != Op::Param && !node.value.all_finite()) {
    throw NumericError(std::string(op_name(node.op)) + ": non-finite value in output " +
                       node.value.shape_str());
  }
  if (node.op != Op::Param && node.op != Op::Detach) {
    for (auto p : node.parents) node.requires_grad = node.requires_grad || nodes_[p].requires_grad;
  }
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor t) {
  TapeNode n;
  n.op = Op::Constant;
  n.value = std::move(t);
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  TapeNode n;
  n.op = Op::Param;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.cols() != B.rows()) shape_error(Op::MatMul, A, B);
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C.row(i);
    const double* arow = A.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = B.row(p);
      for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
  TapeNode node;
  node.op = Op::MatMul;
  node.parents = {a.id, b.id};
  node.value = std::move(C);
  return push(std::move(node));
}

Var Tape::add(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  Tensor C = A;
  if (B.same_shape(A)) {
    for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  } else if (B.rows() == 1 && B.cols() == A.cols()) {
    for (std::size_t r = 0; r < C.rows(); ++r) {
      double* c = C.row(r);
      for (std::size_t j = 0; j < C.cols(); ++j) c[j] += B[j];
    }
  } else if (B.size() == 1) {
    for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[0];
  } else {
    shape_error(Op::Add, A, B);
  }
  TapeNode node;
  node.op = Op::Add;
  node.parents = {a.id, b.id};
  node.value = std::move(C);
  return push(std::move(node));
}

Var Tape::mul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  Tensor C = A;
  if (B.same_shape(A)) {
    for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
  } else if (B.cols() == 1 && B.rows() == A.rows()) {
    for (std::size_t r = 0; r < C.rows(); ++r) {
      double* c = C.row(r);
      const double s = B[r];
      for (std::size_t j = 0; j < C.cols(); ++j) c[j] *= s;
    }
  } else {
    shape_error(Op::Mul, A, B);
  }
  TapeNode node;
  node.op = Op::Mul;
  node.parents = {a.id, b.id};
  node.value = std::move(C);
  return push(std::move(node));
}

Var Tape::scalar_mul(Var a, double s) {
  Tensor C = value(a);
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= s;
  TapeNode node;
  node.op = Op::ScalarMul;
  node.parents = {a.id};
  node.scalar = s;
  node.value = std::move(C);
  return push(std::move(node));
}

Var Tape::sigmoid(Var a) {
  Tensor C = value(a);
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = sigmoid_scalar(C[i]);
  TapeNode node;
  node.op = Op::Sigmoid;
  node.parents = {a.id};
  node.value = std::move(C);
  return push(std::move(node));
}

Var Tape::relu(Var a) {
  Tensor C = value(a);
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = C[i] > 0.0 ? C[i] : 0.0;
  TapeNode node;
  node.op = Op::Relu;
  node.parents = {a.id};
  node.value = std::move(C);
  return push(std::move(node));
}

Var Tape::row_gather(Var a, std::vector<Index> rows) {
  const Tensor& A = value(a);
  check_indices(Op::RowGather, rows, A.rows());
  Tensor C(rows.size(), A.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(A.row(rows[r]), A.cols(), C.row(r));
  }
  TapeNode node;
  node.op = Op::RowGather;
  node.parents = {a.id};
  node.index = std::move(rows);
  node.value = std::move(C);
  return push(std::move(node));
}

Var Tape::scatter_add(Var a, std::vector<Index> rows, std::size_t num_rows) {
  const Tensor& A = value(a);
  if (rows.size() != A.rows()) {
    throw DimensionError("scatter-add-by-index: " + std::to_string(rows.size()) +
                         " indices for input " + A.shape_str());
  }
  check_indices(Op::ScatterAdd, rows, num_rows);
  Tensor C(num_rows, A.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    double* c = C.row(rows[r]);
    const double* src = A.row(r);
    for (std::size_t j = 0; j < A.cols(); ++j) c[j] += src[j];
  }
  TapeNode node;
  node.op = Op::ScatterAdd;
  node.parents = {a.id};
  node.index = std::move(rows);
  node.value = std::move(C);
  return push(std::move(node));
}

Var Tape::row_sum(Var a) {
  const Tensor& A = value(a);
  Tensor C(A.rows(), 1);
  for (std::size_t r = 0; r < A.rows(); ++r) {
    double s = 0.0;
    const double* src = A.row(r);
    for (std::size_t j = 0; j < A.cols(); ++j) s += src[j];
    C[r] = s;
  }
  TapeNode node;
  node.op = Op::RowSum;
  node.parents = {a.id};
  node.value = std::move(C);
  return push(std::move(node));
}

Var Tape::mean_all(Var a) {
  const Tensor& A = value(a);
  if (A.size() == 0) throw ContractError("mean-all of empty tensor");
  double s = 0.0;
  for (double v : A.values()) s += v;
  TapeNode node;
  node.op = Op::MeanAll;
  node.parents = {a.id};
  node.value = Tensor::scalar(s / static_cast<double>(A.size()));
  return push(std::move(node));
}

Var Tape::mean_rows_by_group(Var a, std::vector<Index> group, std::size_t num_groups) {
  const Tensor& A = value(a);
  if (group.size() != A.rows()) {
    throw DimensionError("mean-rows-by-group: " + std::to_string(group.size()) +
                         " group ids for input " + A.shape_str());
  }
  check_indices(Op::MeanRowsByGroup, group, num_groups);
  std::vector<std::size_t> counts(num_groups, 0);
  for (Index g : group) ++counts[g];
  for (std::size_t g = 0; g < num_groups; ++g) {
    if (counts[g] == 0) {
      throw ContractError("mean-rows-by-group: group " + std::to_string(g) + " has no rows");
    }
  }
  Tensor C(num_groups, A.cols());
  for (std::size_t r = 0; r < A.rows(); ++r) {
    double* c = C.row(group[r]);
    const double* src = A.row(r);
    for (std::size_t j = 0; j < A.cols(); ++j) c[j] += src[j];
  }
  for (std::size_t g = 0; g < num_groups; ++g) {
    const double inv = 1.0 / static_cast<double>(counts[g]);
    double* c = C.row(g);
    for (std::size_t j = 0; j < C.cols(); ++j) c[j] *= inv;
  }
  TapeNode node;
  node.op = Op::MeanRowsByGroup;
  node.parents = {a.id};
  node.index = std::move(group);
  node.count = num_groups;
  node.value = std::move(C);
  return push(std::move(node));
}

Var Tape::variance(Var a) {
  const Tensor& A = value(a);
  if (A.size() == 0) throw ContractError("variance-of-vector of empty tensor");
  const double n = static_cast<double>(A.size());
  double mean = 0.0;
  for (double v : A.values()) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : A.values()) ss += (v - mean) * (v - mean);
  TapeNode node;
  node.op = Op::Variance;
  node.parents = {a.id};
  node.scalar = mean;
  node.value = Tensor::scalar(ss / n);
  return push(std::move(node));
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat-rows of zero tensors");
  const std::size_t cols = value(parts[0]).cols();
  std::size_t rows = 0;
  for (Var p : parts) {
    if (value(p).cols() != cols) shape_error(Op::ConcatRows, value(parts[0]), value(p));
    rows += value(p).rows();
  }
  Tensor C(rows, cols);
  std::size_t off = 0;
  TapeNode node;
  node.op = Op::ConcatRows;
  for (Var p : parts) {
    const Tensor& P = value(p);
    std::copy_n(P.data(), P.size(), C.data() + off * cols);
    off += P.rows();
    node.parents.push_back(p.id);
  }
  node.value = std::move(C);
  return push(std::move(node));
}

Var Tape::softmax_cross_entropy(Var logits, std::vector<Index> labels) {
  const Tensor& L = value(logits);
  if (labels.size() != L.rows()) {
    throw DimensionError("softmax-cross-entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + L.shape_str());
  }
  check_indices(Op::SoftmaxCrossEntropy, labels, L.cols());
  Tensor probs(L.rows(), L.cols());
  Tensor loss(L.rows(), 1);
  for (std::size_t r = 0; r < L.rows(); ++r) {
    const double* x = L.row(r);
    double* p = probs.row(r);
    const double m = *std::max_element(x, x + L.cols());
    double z = 0.0;
    for (std::size_t j = 0; j < L.cols(); ++j) {
      p[j] = std::exp(x[j] - m);
      z += p[j];
    }
    for (std::size_t j = 0; j < L.cols(); ++j) p[j] /= z;
    loss[r] = m + std::log(z) - x[labels[r]];
  }
  TapeNode node;
  node.op = Op::SoftmaxCrossEntropy;
  node.parents = {logits.id};
  node.index = std::move(labels);
  node.saved = std::move(probs);
  node.value = std::move(loss);
  return push(std::move(node));
}

Var Tape::detach(Var a) {
  TapeNode node;
  node.op = Op::Detach;
  node.parents = {a.id};
  node.detached = true;
  node.value = value(a);
  return push(std::move(node));
}

Tensor Tape::grad(Var v) const {
  const TapeNode& n = nodes_.at(v.id);
  if (n.has_grad) return n.grad;
  return Tensor(n.value.rows(), n.value.cols());
}

Tensor& Tape::grad_buffer(std::uint32_t id) {
  TapeNode& n = nodes_[id];
  if (!n.has_grad) {
    if (n.grad.same_shape(n.value)) {
      n.grad.fill(0.0);
    } else {
      n.grad = Tensor(n.value.rows(), n.value.cols());
    }
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw ContractError("backward: loss must be a scalar, got " + value(loss).shape_str());
  }
  for (auto& n : nodes_) n.has_grad = false;
  grad_buffer(loss.id)[0] = 1.0;

  for (std::int64_t id = loss.id; id >= 0; --id) {
    TapeNode& n = nodes_[id];
    if (!n.has_grad || !n.requires_grad) continue;
    const Tensor& g = n.grad;
    auto wants = [&](std::size_t k) { return nodes_[n.parents[k]].requires_grad; };

    switch (n.op) {
      case Op::Constant:
      case Op::Detach:
        break;
      case Op::Param: {
        Tensor& pg = n.param->grad;
        for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
        break;
      }
      case Op::MatMul: {
        const Tensor& A = nodes_[n.parents[0]].value;
        const Tensor& B = nodes_[n.parents[1]].value;
        const std::size_t m = A.rows(), k = A.cols(), cols = B.cols();
        if (wants(0)) {
          Tensor& ga = grad_buffer(n.parents[0]);
          for (std::size_t i = 0; i < m; ++i) {
            const double* gr = g.row(i);
            double* out = ga.row(i);
            for (std::size_t p = 0; p < k; ++p) {
              const double* br = B.row(p);
              double s = 0.0;
              for (std::size_t j = 0; j < cols; ++j) s += gr[j] * br[j];
              out[p] += s;
            }
          }
        }
        if (wants(1)) {
          Tensor& gb = grad_buffer(n.parents[1]);
          for (std::size_t i = 0; i < m; ++i) {
            const double* gr = g.row(i);
            const double* ar = A.row(i);
            for (std::size_t p = 0; p < k; ++p) {
              const double av = ar[p];
              if (av == 0.0) continue;
              double* out = gb.row(p);
              for (std::size_t j = 0; j < cols; ++j) out[j] += av * gr[j];
            }
          }
        }
        break;
      }
      case Op::Add: {
        if (wants(0)) {
          Tensor& ga = grad_buffer(n.parents[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (wants(1)) {
          Tensor& gb = grad_buffer(n.parents[1]);
          if (gb.same_shape(g)) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
          } else if (gb.size() == 1) {
            double s = 0.0;
            for (double v : g.values()) s += v;
            gb[0] += s;
          } else {
            for (std::size_t r = 0; r < g.rows(); ++r) {
              const double* gr = g.row(r);
              for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += gr[j];
            }
          }
        }
        break;
      }
      case Op::Mul: {
        const Tensor& A = nodes_[n.parents[0]].value;
        const Tensor& B = nodes_[n.parents[1]].value;
        const bool column = !B.same_shape(A);
        if (wants(0)) {
          Tensor& ga = grad_buffer(n.parents[0]);
          if (!column) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
          } else {
            for (std::size_t r = 0; r < g.rows(); ++r) {
              const double s = B[r];
              const double* gr = g.row(r);
              double* out = ga.row(r);
              for (std::size_t j = 0; j < g.cols(); ++j) out[j] += gr[j] * s;
            }
          }
        }
        if (wants(1)) {
          Tensor& gb = grad_buffer(n.parents[1]);
          if (!column) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
          } else {
            for (std::size_t r = 0; r < g.rows(); ++r) {
              const double* gr = g.row(r);
              const double* ar = A.row(r);
              double s = 0.0;
              for (std::size_t j = 0; j < g.cols(); ++j) s += gr[j] * ar[j];
              gb[r] += s;
            }
          }
        }
        break;
      }
      case Op::ScalarMul: {
        Tensor& ga = grad_buffer(n.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.scalar;
        break;
      }
      case Op::Sigmoid: {
        Tensor& ga = grad_buffer(n.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double s = n.value[i];
          ga[i] += g[i] * s * (1.0 - s);
        }
        break;
      }
      case Op::Relu: {
        Tensor& ga = grad_buffer(n.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (n.value[i] > 0.0) ga[i] += g[i];
        }
        break;
      }
      case Op::RowGather: {
        Tensor& ga = grad_buffer(n.parents[0]);
        const std::size_t cols = g.cols();
        for (std::size_t r = 0; r < n.index.size(); ++r) {
          double* out = ga.row(n.index[r]);
          const double* gr = g.row(r);
          for (std::size_t j = 0; j < cols; ++j) out[j] += gr[j];
        }
        break;
      }
      case Op::ScatterAdd: {
        Tensor& ga = grad_buffer(n.parents[0]);
        const std::size_t cols = g.cols();
        for (std::size_t r = 0; r < n.index.size(); ++r) {
          const double* gr = g.row(n.index[r]);
          double* out = ga.row(r);
          for (std::size_t j = 0; j < cols; ++j) out[j] += gr[j];
        }
        break;
      }
      case Op::RowSum: {
        Tensor& ga = grad_buffer(n.parents[0]);
        for (std::size_t r = 0; r < ga.rows(); ++r) {
          double* out = ga.row(r);
          for (std::size_t j = 0; j < ga.cols(); ++j) out[j] += g[r];
        }
        break;
      }
      case Op::MeanAll: {
        Tensor& ga = grad_buffer(n.parents[0]);
        const double s = g[0] / static_cast<double>(ga.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
        break;
      }
      case Op::MeanRowsByGroup: {
        Tensor& ga = grad_buffer(n.parents[0]);
        std::vector<std::size_t> counts(n.count, 0);
        for (Index k : n.index) ++counts[k];
        for (std::size_t r = 0; r < n.index.size(); ++r) {
          const Index k = n.index[r];
          const double inv = 1.0 / static_cast<double>(counts[k]);
          const double* gr = g.row(k);
          double* out = ga.row(r);
          for (std::size_t j = 0; j < ga.cols(); ++j) out[j] += gr[j] * inv;
        }
        break;
      }
      case Op::Variance: {
        const Tensor& A = nodes_[n.parents[0]].value;
        Tensor& ga = grad_buffer(n.parents[0]);
        const double s = 2.0 * g[0] / static_cast<double>(A.size());
        for (std::size_t i = 0; i < A.size(); ++i) ga[i] += s * (A[i] - n.scalar);
        break;
      }
      case Op::ConcatRows: {
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
          const std::size_t len = nodes_[n.parents[k]].value.size();
          if (wants(k)) {
            Tensor& gp = grad_buffer(n.parents[k]);
            for (std::size_t i = 0; i < len; ++i) gp[i] += g[off + i];
          }
          off += len;
        }
        break;
      }
      case Op::SoftmaxCrossEntropy: {
        Tensor& ga = grad_buffer(n.parents[0]);
        const Tensor& P = n.saved;
        for (std::size_t r = 0; r < P.rows(); ++r) {
          const double* p = P.row(r);
          double* out = ga.row(r);
          for (std::size_t j = 0; j < P.cols(); ++j) out[j] += g[r] * p[j];
          out[n.index[r]] -= g[r];
        }
        break;
      }
    }
  }
}

}  // namespace dirgnn::ad
