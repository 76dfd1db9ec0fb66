#ifndef SIGBANDIT_AUTODIFF_HPP
#define SIGBANDIT_AUTODIFF_HPP

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sigbandit/rng.hpp"

namespace sigbandit::ad {

// Tensors are rank 0 (scalar), 1 (vector) or 2 (row-major matrix).
using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

enum class OpKind {
  leaf,
  matmul,
  add,
  sub,
  mul,
  concat,
  relu,
  tanh,
  sigmoid,
  softmax,
  log_softmax,
  embedding_lookup,
  sum,
  mean,
  dot_rows,
  scale,
  affine,
  slice,
  reshape,
  rows_dot,
  rows_mix,
  rows_sum,
  gumbel_softmax_st,
};

class Tape;

// Cheap handle into a tape node. Valid until the owning tape is reset.
struct Tensor {
  Tape* tape = nullptr;
  int id = -1;

  bool defined() const { return tape != nullptr; }
  const Shape& shape() const;
  const std::vector<double>& values() const;
  int64_t size() const;
};

// A named trainable array living outside any tape. Leafed onto a tape each
// step; backward() accumulates into grad.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;

  int64_t size() const { return static_cast<int64_t>(value.size()); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

class ParamStore {
 public:
  // zero-initialized
  Parameter& add(const std::string& name, Shape shape);
  // uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
  Parameter& add_uniform(const std::string& name, Shape shape, int fan_in, Rng& rng);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  size_t size() const { return params_.size(); }
  Parameter& at(size_t i) { return *params_[i]; }
  const Parameter& at(size_t i) const { return *params_[i]; }

  void zero_grads();
  int64_t total_values() const;

  // checkpoint: JSON with a flat list of {name, shape, values (row-major)}
  std::string to_checkpoint_json() const;
  void save_checkpoint(const std::string& path) const;
  // every stored name must be present with an identical shape
  void load_checkpoint_json(const std::string& json_text);
  void load_checkpoint(const std::string& path);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, size_t> index_;
};

struct Node {
  OpKind op = OpKind::leaf;
  Shape shape;
  std::vector<double> val;
  std::vector<double> grad;  // sized lazily during backward
  bool requires_grad = false;
  std::vector<int> in;        // input node ids (top. order holds by construction)
  std::vector<double> fsave;  // op-specific saved activations
  std::vector<int> isave;     // op-specific saved indices/offsets
  double s0 = 0.0, s1 = 0.0;  // op-specific scalars
  Parameter* param = nullptr; // leaf backref
};

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  // --- leaves ---
  Tensor constant(Shape shape, std::vector<double> values);
  Tensor scalar(double v);
  Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad);
  // Copies the parameter's current value; grads flow back into p.grad.
  // Repeated calls for the same parameter return the same leaf.
  Tensor param(Parameter& p);

  // --- ops ---
  Tensor matmul(Tensor a, Tensor b);
  Tensor add(Tensor a, Tensor b);        // same shape, or [m x n] + [n]
  Tensor sub(Tensor a, Tensor b);
  Tensor mul(Tensor a, Tensor b);        // elementwise
  Tensor concat(std::span<const Tensor> parts);  // rank-1 inputs
  Tensor relu(Tensor x);
  Tensor tanh(Tensor x);
  Tensor sigmoid(Tensor x);
  Tensor softmax(Tensor x);              // per row for rank 2
  Tensor log_softmax(Tensor x);
  Tensor embedding_lookup(Tensor table, std::span<const int> indices);
  Tensor sum(Tensor x);                  // -> scalar
  Tensor mean(Tensor x);                 // -> scalar
  Tensor dot_rows(Tensor a, Tensor b);   // rowwise dot; rank 1 -> scalar
  Tensor scale(Tensor x, double c);
  Tensor affine(Tensor x, double a, double b);  // a*x + b elementwise
  Tensor slice(Tensor x, int begin, int end);   // rank-1 range
  Tensor reshape(Tensor x, Shape shape);
  // out[j] = <table[idx[j]], v>
  Tensor rows_dot(Tensor table, std::span<const int> indices, Tensor v);
  // out = sum_j w[j] * table[idx[j]]
  Tensor rows_mix(Tensor table, std::span<const int> indices, Tensor w);
  // out[r] = sum_k tables[k][indices[k][r]] + bias  (embedding-bag gather)
  Tensor rows_sum(std::span<const Tensor> tables, const std::vector<std::vector<int>>& indices,
                  Tensor bias);

  // Forward: exact one-hot at argmax(logits + Gumbel noise).
  // Backward: gradient of softmax((logits + g) / temperature).
  Tensor gumbel_softmax_st(Tensor logits, double temperature, Rng& rng);

  // Dynamic dispatch over the primitive op set; `attr` feeds scale's factor.
  // embedding_lookup takes the (integral) indices as the second input tensor.
  Tensor apply(std::string_view op_kind, std::span<const Tensor> inputs, double attr = 0.0);

  // Accumulates d(loss)/d(leaf) into every reachable Parameter's grad.
  void backward(Tensor loss);

  void reset();
  size_t num_nodes() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  const std::vector<double>& val(Tensor t) const;
  // gradient of the last backward() w.r.t. a node (empty if off-path)
  const std::vector<double>& grad(Tensor t) const;

 private:
  Tensor push(Node n);
  Node& mut(Tensor t) { return nodes_[static_cast<size_t>(t.id)]; }
  void check_same_tape(Tensor t) const;
  void backward_node(int id);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_leafs_;
  bool grad_enabled_ = true;
};

// --- GRU cell -------------------------------------------------------------
// Weights follow the x*W convention: wx [input x 3H], wh [H x 3H], biases
// [3H]. Gate blocks are ordered (reset r, update z, candidate n):
//   r  = sigmoid(gx[0:H]   + gh[0:H])
//   z  = sigmoid(gx[H:2H]  + gh[H:2H])
//   n  = tanh   (gx[2H:3H] + r * gh[2H:3H])
//   h' = (1 - z) * n + z * h
// where gx = x*wx + bx and gh = h*wh + bh (the reset gate multiplies the
// hidden-side candidate term including its bias).
struct GruWeights {
  Tensor wx, wh, bx, bh;
  int input_size = 0;
  int hidden_size = 0;
};

Tensor gru_cell(Tape& tape, const GruWeights& w, Tensor x, Tensor h);

}  // namespace sigbandit::ad

#endif
