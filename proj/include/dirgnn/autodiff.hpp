#pragma once

// Define-by-run reverse-mode differentiation over dense double tensors.
//
// A Tape is built fresh for every training step. Operations append nodes in
// topological order; backward() walks them in reverse and accumulates into the
// Parameter objects that were registered as leaves.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dirgnn/errors.hpp"
#include "dirgnn/tensor.hpp"

namespace dirgnn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}
};

enum class GroupId : std::uint8_t { Generator = 0, Encoder = 1, CausalHead = 2, SpuriousHead = 3 };

const char* group_name(GroupId id);
GroupId group_from_name(const std::string& name);

struct ParamGroup {
  GroupId id;
  std::vector<Parameter> params;

  explicit ParamGroup(GroupId g) : id(g) {}

  std::size_t add(std::string name, Tensor value);
  void zero_grad();
  // True when every gradient entry is exactly 0.0.
  bool grad_is_zero() const;
  std::size_t num_scalars() const;
};

}  // namespace dirgnn

namespace dirgnn::ad {

enum class Op : std::uint8_t {
  Constant,
  Param,
  MatMul,
  Add,
  Mul,
  ScalarMul,
  Sigmoid,
  Relu,
  RowGather,
  ScatterAdd,
  RowSum,
  MeanAll,
  MeanRowsByGroup,
  Variance,
  ConcatRows,
  SoftmaxCrossEntropy,
  Detach,
};

const char* op_name(Op op);

struct Var {
  std::uint32_t id = 0;
};

using Index = std::int32_t;

struct TapeNode {
  Op op = Op::Constant;
  std::vector<std::uint32_t> parents;
  Tensor value;
  Tensor grad;
  bool has_grad = false;
  bool requires_grad = false;
  bool detached = false;
  // Saved forward data: gather/scatter indices, group ids or labels.
  std::vector<Index> index;
  // Softmax probabilities for the fused cross-entropy.
  Tensor saved;
  double scalar = 0.0;
  std::size_t count = 0;
  Parameter* param = nullptr;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor t);
  // Registers a parameter as a leaf; backward() accumulates into p.grad.
  Var param(Parameter& p);

  // a: m x k, b: k x n.
  Var matmul(Var a, Var b);
  // b may match a, be a 1 x cols row (broadcast over rows) or a 1 x 1 scalar.
  Var add(Var a, Var b);
  // b may match a or be a rows x 1 column (broadcast over columns).
  Var mul(Var a, Var b);
  Var scalar_mul(Var a, double s);
  Var sigmoid(Var a);
  Var relu(Var a);
  Var row_gather(Var a, std::vector<Index> rows);
  Var scatter_add(Var a, std::vector<Index> rows, std::size_t num_rows);
  Var row_sum(Var a);
  Var mean_all(Var a);
  Var mean_rows_by_group(Var a, std::vector<Index> group, std::size_t num_groups);
  // Population variance (divide by n) over all entries; 1 x 1.
  Var variance(Var a);
  Var concat_rows(std::span<const Var> parts);
  // Per-row loss, rows x 1. labels.size() == logits.rows().
  Var softmax_cross_entropy(Var logits, std::vector<Index> labels);
  Var detach(Var a);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  // Gradient of the most recent backward() at node v (zeros if unreached).
  Tensor grad(Var v) const;
  const TapeNode& node(Var v) const { return nodes_.at(v.id); }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1, propagates, and adds into Parameter::grad.
  // Node gradients are reset at the start of each call; parameter gradients
  // are not.
  void backward(Var loss);

 private:
  Var push(TapeNode node);
  TapeNode& at(Var v) { return nodes_.at(v.id); }
  Tensor& grad_buffer(std::uint32_t id);

  std::vector<TapeNode> nodes_;
};

}  // namespace dirgnn::ad
