#include "sigbandit/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "sigbandit/io_util.hpp"
#include "json.hpp"

namespace sigbandit::ad {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

int rows_of(const Shape& s) { return s.size() == 2 ? s[0] : 1; }
int cols_of(const Shape& s) { return s.size() == 2 ? s[1] : (s.size() == 1 ? s[0] : 1); }

}  // namespace

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

const Shape& Tensor::shape() const { return tape->node(id).shape; }
const std::vector<double>& Tensor::values() const { return tape->node(id).val; }
int64_t Tensor::size() const { return static_cast<int64_t>(tape->node(id).val.size()); }

// --- ParamStore -------------------------------------------------------------

Parameter& ParamStore::add(const std::string& name, Shape shape) {
  if (index_.count(name)) fail("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->shape = std::move(shape);
  p->value.assign(static_cast<size_t>(numel(p->shape)), 0.0);
  p->grad.assign(p->value.size(), 0.0);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParamStore::add_uniform(const std::string& name, Shape shape, int fan_in, Rng& rng) {
  Parameter& p = add(name, std::move(shape));
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : p.value) v = rng.uniform_range(-bound, bound);
  return p;
}

Parameter* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p->zero_grad();
}

int64_t ParamStore::total_values() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

std::string ParamStore::to_checkpoint_json() const {
  nlohmann::json root;
  root["format"] = "sigbandit-params-v1";
  nlohmann::json list = nlohmann::json::array();
  for (const auto& p : params_) {
    nlohmann::json e;
    e["name"] = p->name;
    e["shape"] = p->shape;
    e["values"] = p->value;
    list.push_back(std::move(e));
  }
  root["params"] = std::move(list);
  return root.dump();
}

void ParamStore::save_checkpoint(const std::string& path) const {
  write_text_file(path, to_checkpoint_json());
}

void ParamStore::load_checkpoint_json(const std::string& json_text) {
  nlohmann::json root = nlohmann::json::parse(json_text);
  if (!root.contains("params")) throw std::runtime_error("checkpoint: missing 'params'");
  size_t loaded = 0;
  for (const auto& e : root["params"]) {
    std::string name = e.at("name").get<std::string>();
    Parameter* p = find(name);
    if (p == nullptr) throw std::runtime_error("checkpoint: unknown parameter '" + name + "'");
    Shape shape = e.at("shape").get<Shape>();
    if (shape != p->shape) {
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file " +
                               shape_str(shape) + " vs model " + shape_str(p->shape));
    }
    std::vector<double> vals = e.at("values").get<std::vector<double>>();
    if (vals.size() != p->value.size()) {
      throw std::runtime_error("checkpoint: value count mismatch for '" + name + "'");
    }
    p->value = std::move(vals);
    ++loaded;
  }
  if (loaded != params_.size()) {
    throw std::runtime_error("checkpoint: file has " + std::to_string(loaded) +
                             " parameters, model expects " + std::to_string(params_.size()));
  }
}

void ParamStore::load_checkpoint(const std::string& path) {
  load_checkpoint_json(read_text_file(path));
}

// --- Tape: construction helpers ----------------------------------------------

void Tape::check_same_tape(Tensor t) const {
  if (t.tape != this || t.id < 0 || t.id >= static_cast<int>(nodes_.size())) {
    fail("tensor does not belong to this tape");
  }
}

Tensor Tape::push(Node n) {
  if (!grad_enabled_) n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return Tensor{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::constant(Shape shape, std::vector<double> values) {
  if (numel(shape) != static_cast<int64_t>(values.size())) {
    fail("constant: shape " + shape_str(shape) + " does not match " +
         std::to_string(values.size()) + " values");
  }
  Node n;
  n.op = OpKind::leaf;
  n.shape = std::move(shape);
  n.val = std::move(values);
  return push(std::move(n));
}

Tensor Tape::scalar(double v) { return constant(Shape{}, {v}); }

Tensor Tape::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  Tensor t = constant(std::move(shape), std::move(values));
  mut(t).requires_grad = requires_grad && grad_enabled_;
  return t;
}

Tensor Tape::param(Parameter& p) {
  auto it = param_leafs_.find(&p);
  if (it != param_leafs_.end()) return Tensor{this, it->second};
  Node n;
  n.op = OpKind::leaf;
  n.shape = p.shape;
  n.val = p.value;
  n.requires_grad = true;
  n.param = &p;
  Tensor t = push(std::move(n));
  param_leafs_[&p] = t.id;
  return t;
}

namespace {
bool any_requires(const Tape& tape, std::initializer_list<Tensor> ts) {
  for (Tensor t : ts) {
    if (tape.node(t.id).requires_grad) return true;
  }
  return false;
}
}  // namespace

// --- ops ---------------------------------------------------------------------

Tensor Tape::matmul(Tensor a, Tensor b) {
  check_same_tape(a);
  check_same_tape(b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 1 || sa.size() > 2 || sb.size() < 1 || sb.size() > 2 ||
      (sa.size() == 1 && sb.size() == 1)) {
    fail("matmul: unsupported ranks " + shape_str(sa) + " x " + shape_str(sb));
  }
  Shape out_shape;
  if (sa.size() == 2 && sb.size() == 2) {
    if (sa[1] != sb[0]) fail("matmul: inner dimensions differ: " + shape_str(sa) + " vs " + shape_str(sb));
    out_shape = {sa[0], sb[1]};
  } else if (sa.size() == 2) {  // [m x k] * [k]
    if (sa[1] != sb[0]) fail("matmul: inner dimensions differ: " + shape_str(sa) + " vs " + shape_str(sb));
    out_shape = {sa[0]};
  } else {  // [k] * [k x n]
    if (sa[0] != sb[0]) fail("matmul: inner dimensions differ: " + shape_str(sa) + " vs " + shape_str(sb));
    out_shape = {sb[1]};
  }
  Node n;
  n.op = OpKind::matmul;
  n.shape = out_shape;
  n.in = {a.id, b.id};
  n.requires_grad = any_requires(*this, {a, b});
  n.val.assign(static_cast<size_t>(numel(out_shape)), 0.0);
  {
    const Node& na = node(a.id);
    const Node& nb = node(b.id);
    // view rank-1 operands as a column (rhs) or row (lhs)
    int m = sa.size() == 2 ? sa[0] : 1;
    int k = sa.back();
    int p = sb.size() == 2 ? sb[1] : 1;
    CMatMap A(na.val.data(), m, k);
    CMatMap B(nb.val.data(), k, p);
    MatMap Y(n.val.data(), m, p);
    Y.noalias() = A * B;
  }
  return push(std::move(n));
}

Tensor Tape::add(Tensor a, Tensor b) {
  check_same_tape(a);
  check_same_tape(b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool broadcast = sa.size() == 2 && sb.size() == 1 && sa[1] == sb[0];
  if (!broadcast && sa != sb) {
    fail("add: shape mismatch: " + shape_str(sa) + " vs " + shape_str(sb));
  }
  Node n;
  n.op = OpKind::add;
  n.shape = sa;
  n.in = {a.id, b.id};
  n.requires_grad = any_requires(*this, {a, b});
  const auto& va = node(a.id).val;
  const auto& vb = node(b.id).val;
  n.val.resize(va.size());
  if (broadcast) {
    int m = sa[0], c = sa[1];
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < c; ++j) {
        n.val[static_cast<size_t>(i * c + j)] = va[static_cast<size_t>(i * c + j)] + vb[static_cast<size_t>(j)];
      }
    }
  } else {
    for (size_t i = 0; i < va.size(); ++i) n.val[i] = va[i] + vb[i];
  }
  return push(std::move(n));
}

Tensor Tape::sub(Tensor a, Tensor b) {
  check_same_tape(a);
  check_same_tape(b);
  if (a.shape() != b.shape()) {
    fail("sub: shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Node n;
  n.op = OpKind::sub;
  n.shape = a.shape();
  n.in = {a.id, b.id};
  n.requires_grad = any_requires(*this, {a, b});
  const auto& va = node(a.id).val;
  const auto& vb = node(b.id).val;
  n.val.resize(va.size());
  for (size_t i = 0; i < va.size(); ++i) n.val[i] = va[i] - vb[i];
  return push(std::move(n));
}

Tensor Tape::mul(Tensor a, Tensor b) {
  check_same_tape(a);
  check_same_tape(b);
  if (a.shape() != b.shape()) {
    fail("mul: shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Node n;
  n.op = OpKind::mul;
  n.shape = a.shape();
  n.in = {a.id, b.id};
  n.requires_grad = any_requires(*this, {a, b});
  const auto& va = node(a.id).val;
  const auto& vb = node(b.id).val;
  n.val.resize(va.size());
  for (size_t i = 0; i < va.size(); ++i) n.val[i] = va[i] * vb[i];
  return push(std::move(n));
}

Tensor Tape::concat(std::span<const Tensor> parts) {
  if (parts.empty()) fail("concat: no inputs");
  Node n;
  n.op = OpKind::concat;
  int64_t total = 0;
  for (Tensor t : parts) {
    check_same_tape(t);
    if (t.shape().size() != 1) fail("concat: rank-1 inputs required, got " + shape_str(t.shape()));
    n.in.push_back(t.id);
    n.isave.push_back(static_cast<int>(total));  // offset of each part
    total += t.size();
    if (node(t.id).requires_grad) n.requires_grad = true;
  }
  n.shape = {static_cast<int>(total)};
  n.val.reserve(static_cast<size_t>(total));
  for (Tensor t : parts) {
    const auto& v = node(t.id).val;
    n.val.insert(n.val.end(), v.begin(), v.end());
  }
  return push(std::move(n));
}

namespace {
template <typename F>
Node unary_node(Tape& tape, Tensor x, OpKind op, F&& f) {
  Node n;
  n.op = op;
  n.shape = x.shape();
  n.in = {x.id};
  n.requires_grad = tape.node(x.id).requires_grad;
  const auto& v = tape.node(x.id).val;
  n.val.resize(v.size());
  for (size_t i = 0; i < v.size(); ++i) n.val[i] = f(v[i]);
  return n;
}
}  // namespace

Tensor Tape::relu(Tensor x) {
  check_same_tape(x);
  return push(unary_node(*this, x, OpKind::relu, [](double v) { return v > 0.0 ? v : 0.0; }));
}

Tensor Tape::tanh(Tensor x) {
  check_same_tape(x);
  return push(unary_node(*this, x, OpKind::tanh, [](double v) { return std::tanh(v); }));
}

Tensor Tape::sigmoid(Tensor x) {
  check_same_tape(x);
  return push(unary_node(*this, x, OpKind::sigmoid, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }));
}

namespace {
// numerically stable per-row softmax / log-softmax
void softmax_rows(const double* x, double* y, int rows, int cols, bool log_form) {
  for (int r = 0; r < rows; ++r) {
    const double* xi = x + static_cast<ptrdiff_t>(r) * cols;
    double* yi = y + static_cast<ptrdiff_t>(r) * cols;
    double mx = xi[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) z += std::exp(xi[j] - mx);
    if (log_form) {
      double lz = std::log(z) + mx;
      for (int j = 0; j < cols; ++j) yi[j] = xi[j] - lz;
    } else {
      for (int j = 0; j < cols; ++j) yi[j] = std::exp(xi[j] - mx) / z;
    }
  }
}
}  // namespace

Tensor Tape::softmax(Tensor x) {
  check_same_tape(x);
  const Shape& s = x.shape();
  if (s.empty()) fail("softmax: rank-1 or rank-2 input required");
  Node n;
  n.op = OpKind::softmax;
  n.shape = s;
  n.in = {x.id};
  n.requires_grad = node(x.id).requires_grad;
  n.val.resize(node(x.id).val.size());
  softmax_rows(node(x.id).val.data(), n.val.data(), rows_of(s), cols_of(s), false);
  return push(std::move(n));
}

Tensor Tape::log_softmax(Tensor x) {
  check_same_tape(x);
  const Shape& s = x.shape();
  if (s.empty()) fail("log_softmax: rank-1 or rank-2 input required");
  Node n;
  n.op = OpKind::log_softmax;
  n.shape = s;
  n.in = {x.id};
  n.requires_grad = node(x.id).requires_grad;
  n.val.resize(node(x.id).val.size());
  softmax_rows(node(x.id).val.data(), n.val.data(), rows_of(s), cols_of(s), true);
  return push(std::move(n));
}

Tensor Tape::embedding_lookup(Tensor table, std::span<const int> indices) {
  check_same_tape(table);
  const Shape& s = table.shape();
  if (s.size() != 1 && s.size() != 2) fail("embedding_lookup: table must be rank 1 or 2");
  int rows = s[0];
  int cols = s.size() == 2 ? s[1] : 1;
  Node n;
  n.op = OpKind::embedding_lookup;
  n.in = {table.id};
  n.requires_grad = node(table.id).requires_grad;
  n.isave.assign(indices.begin(), indices.end());
  for (int idx : indices) {
    if (idx < 0 || idx >= rows) {
      fail("embedding_lookup: index " + std::to_string(idx) + " outside table " + shape_str(s));
    }
  }
  if (s.size() == 2) {
    n.shape = {static_cast<int>(indices.size()), cols};
  } else {
    n.shape = {static_cast<int>(indices.size())};
  }
  n.val.resize(indices.size() * static_cast<size_t>(cols));
  const auto& tv = node(table.id).val;
  for (size_t j = 0; j < indices.size(); ++j) {
    const double* src = tv.data() + static_cast<ptrdiff_t>(indices[j]) * cols;
    std::copy(src, src + cols, n.val.data() + static_cast<ptrdiff_t>(j) * cols);
  }
  return push(std::move(n));
}

Tensor Tape::sum(Tensor x) {
  check_same_tape(x);
  Node n;
  n.op = OpKind::sum;
  n.shape = {};
  n.in = {x.id};
  n.requires_grad = node(x.id).requires_grad;
  double acc = 0.0;
  for (double v : node(x.id).val) acc += v;
  n.val = {acc};
  return push(std::move(n));
}

Tensor Tape::mean(Tensor x) {
  check_same_tape(x);
  if (node(x.id).val.empty()) fail("mean: empty input");
  Node n;
  n.op = OpKind::mean;
  n.shape = {};
  n.in = {x.id};
  n.requires_grad = node(x.id).requires_grad;
  double acc = 0.0;
  for (double v : node(x.id).val) acc += v;
  n.val = {acc / static_cast<double>(node(x.id).val.size())};
  return push(std::move(n));
}

Tensor Tape::dot_rows(Tensor a, Tensor b) {
  check_same_tape(a);
  check_same_tape(b);
  if (a.shape() != b.shape()) {
    fail("dot_rows: shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const Shape& s = a.shape();
  Node n;
  n.op = OpKind::dot_rows;
  n.in = {a.id, b.id};
  n.requires_grad = any_requires(*this, {a, b});
  int rows = rows_of(s);
  int cols = cols_of(s);
  n.shape = s.size() == 2 ? Shape{rows} : Shape{};
  n.val.assign(static_cast<size_t>(rows), 0.0);
  const auto& va = node(a.id).val;
  const auto& vb = node(b.id).val;
  for (int r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int j = 0; j < cols; ++j) {
      acc += va[static_cast<size_t>(r * cols + j)] * vb[static_cast<size_t>(r * cols + j)];
    }
    n.val[static_cast<size_t>(r)] = acc;
  }
  return push(std::move(n));
}

Tensor Tape::scale(Tensor x, double c) {
  check_same_tape(x);
  Node n = unary_node(*this, x, OpKind::scale, [c](double v) { return c * v; });
  n.s0 = c;
  return push(std::move(n));
}

Tensor Tape::affine(Tensor x, double a, double b) {
  check_same_tape(x);
  Node n = unary_node(*this, x, OpKind::affine, [a, b](double v) { return a * v + b; });
  n.s0 = a;
  n.s1 = b;
  return push(std::move(n));
}

Tensor Tape::slice(Tensor x, int begin, int end) {
  check_same_tape(x);
  const Shape& s = x.shape();
  if (s.size() != 1) fail("slice: rank-1 input required, got " + shape_str(s));
  if (begin < 0 || end > s[0] || begin >= end) {
    fail("slice: bad range [" + std::to_string(begin) + ", " + std::to_string(end) + ") for " + shape_str(s));
  }
  Node n;
  n.op = OpKind::slice;
  n.shape = {end - begin};
  n.in = {x.id};
  n.requires_grad = node(x.id).requires_grad;
  n.isave = {begin, end};
  const auto& v = node(x.id).val;
  n.val.assign(v.begin() + begin, v.begin() + end);
  return push(std::move(n));
}

Tensor Tape::reshape(Tensor x, Shape shape) {
  check_same_tape(x);
  if (numel(shape) != x.size()) {
    fail("reshape: " + shape_str(x.shape()) + " has " + std::to_string(x.size()) +
         " values, target " + shape_str(shape) + " wants " + std::to_string(numel(shape)));
  }
  Node n;
  n.op = OpKind::reshape;
  n.shape = std::move(shape);
  n.in = {x.id};
  n.requires_grad = node(x.id).requires_grad;
  n.val = node(x.id).val;
  return push(std::move(n));
}

Tensor Tape::rows_dot(Tensor table, std::span<const int> indices, Tensor v) {
  check_same_tape(table);
  check_same_tape(v);
  const Shape& st = table.shape();
  const Shape& sv = v.shape();
  if (st.size() != 2) fail("rows_dot: table must be rank 2, got " + shape_str(st));
  if (sv.size() != 1 || sv[0] != st[1]) {
    fail("rows_dot: vector " + shape_str(sv) + " incompatible with table " + shape_str(st));
  }
  int cols = st[1];
  Node n;
  n.op = OpKind::rows_dot;
  n.shape = {static_cast<int>(indices.size())};
  n.in = {table.id, v.id};
  n.requires_grad = any_requires(*this, {table, v});
  n.isave.assign(indices.begin(), indices.end());
  n.val.resize(indices.size());
  const auto& tv = node(table.id).val;
  const auto& vv = node(v.id).val;
  for (size_t j = 0; j < indices.size(); ++j) {
    int idx = n.isave[j];
    if (idx < 0 || idx >= st[0]) fail("rows_dot: index out of range");
    const double* row = tv.data() + static_cast<ptrdiff_t>(idx) * cols;
    double acc = 0.0;
    for (int c = 0; c < cols; ++c) acc += row[c] * vv[static_cast<size_t>(c)];
    n.val[j] = acc;
  }
  return push(std::move(n));
}

Tensor Tape::rows_mix(Tensor table, std::span<const int> indices, Tensor w) {
  check_same_tape(table);
  check_same_tape(w);
  const Shape& st = table.shape();
  const Shape& sw = w.shape();
  if (st.size() != 2) fail("rows_mix: table must be rank 2, got " + shape_str(st));
  if (sw.size() != 1 || static_cast<size_t>(sw[0]) != indices.size()) {
    fail("rows_mix: weights " + shape_str(sw) + " incompatible with " +
         std::to_string(indices.size()) + " indices");
  }
  int cols = st[1];
  Node n;
  n.op = OpKind::rows_mix;
  n.shape = {cols};
  n.in = {table.id, w.id};
  n.requires_grad = any_requires(*this, {table, w});
  n.isave.assign(indices.begin(), indices.end());
  n.val.assign(static_cast<size_t>(cols), 0.0);
  const auto& tv = node(table.id).val;
  const auto& wv = node(w.id).val;
  for (size_t j = 0; j < indices.size(); ++j) {
    double wj = wv[j];
    if (wj == 0.0) continue;  // transmitted one-hots make this a single row read
    int idx = n.isave[j];
    if (idx < 0 || idx >= st[0]) fail("rows_mix: index out of range");
    const double* row = tv.data() + static_cast<ptrdiff_t>(idx) * cols;
    for (int c = 0; c < cols; ++c) n.val[static_cast<size_t>(c)] += wj * row[c];
  }
  return push(std::move(n));
}

Tensor Tape::rows_sum(std::span<const Tensor> tables, const std::vector<std::vector<int>>& indices,
                      Tensor bias) {
  if (tables.empty() || tables.size() != indices.size()) {
    fail("rows_sum: tables and index lists must match and be nonempty");
  }
  check_same_tape(bias);
  int cols = -1;
  size_t rows = indices[0].size();
  for (size_t k = 0; k < tables.size(); ++k) {
    check_same_tape(tables[k]);
    const Shape& s = tables[k].shape();
    if (s.size() != 2) fail("rows_sum: tables must be rank 2, got " + shape_str(s));
    if (cols < 0) cols = s[1];
    if (s[1] != cols) fail("rows_sum: column mismatch across tables");
    if (indices[k].size() != rows) fail("rows_sum: index lists differ in length");
    for (int idx : indices[k]) {
      if (idx < 0 || idx >= s[0]) fail("rows_sum: index out of range for table " + shape_str(s));
    }
  }
  if (bias.shape() != Shape{cols}) {
    fail("rows_sum: bias " + shape_str(bias.shape()) + " must be [" + std::to_string(cols) + "]");
  }
  Node n;
  n.op = OpKind::rows_sum;
  n.shape = {static_cast<int>(rows), cols};
  n.requires_grad = node(bias.id).requires_grad;
  for (Tensor t : tables) {
    n.in.push_back(t.id);
    if (node(t.id).requires_grad) n.requires_grad = true;
  }
  n.in.push_back(bias.id);
  for (const auto& idx : indices) n.isave.insert(n.isave.end(), idx.begin(), idx.end());
  n.val.resize(rows * static_cast<size_t>(cols));
  const auto& bv = node(bias.id).val;
  for (size_t r = 0; r < rows; ++r) {
    std::copy(bv.begin(), bv.end(), n.val.begin() + static_cast<ptrdiff_t>(r * cols));
  }
  for (size_t k = 0; k < tables.size(); ++k) {
    const auto& tv = node(tables[k].id).val;
    const int* idx = n.isave.data() + k * rows;
    for (size_t r = 0; r < rows; ++r) {
      const double* src = tv.data() + static_cast<ptrdiff_t>(idx[r]) * cols;
      double* dst = n.val.data() + static_cast<ptrdiff_t>(r) * cols;
      for (int c = 0; c < cols; ++c) dst[c] += src[c];
    }
  }
  return push(std::move(n));
}

Tensor Tape::gumbel_softmax_st(Tensor logits, double temperature, Rng& rng) {
  check_same_tape(logits);
  if (!(temperature > 0.0)) {
    fail("gumbel_softmax_st: temperature must be positive, got " + std::to_string(temperature));
  }
  const Shape& s = logits.shape();
  if (s.size() != 1) fail("gumbel_softmax_st: rank-1 logits required, got " + shape_str(s));
  int v = s[0];
  Node n;
  n.op = OpKind::gumbel_softmax_st;
  n.shape = s;
  n.in = {logits.id};
  n.requires_grad = node(logits.id).requires_grad;
  n.s0 = temperature;
  // perturbed and tempered logits
  std::vector<double> z(static_cast<size_t>(v));
  const auto& lv = node(logits.id).val;
  for (int i = 0; i < v; ++i) {
    z[static_cast<size_t>(i)] = (lv[static_cast<size_t>(i)] + rng.gumbel()) / temperature;
  }
  n.fsave.resize(static_cast<size_t>(v));  // soft sample, for the backward pass
  softmax_rows(z.data(), n.fsave.data(), 1, v, false);
  int best = 0;
  for (int i = 1; i < v; ++i) {
    if (z[static_cast<size_t>(i)] > z[static_cast<size_t>(best)]) best = i;
  }
  n.isave = {best};
  n.val.assign(static_cast<size_t>(v), 0.0);
  n.val[static_cast<size_t>(best)] = 1.0;
  return push(std::move(n));
}

Tensor Tape::apply(std::string_view op_kind, std::span<const Tensor> inputs, double attr) {
  auto need = [&](size_t k) {
    if (inputs.size() != k) {
      fail(std::string(op_kind) + ": expected " + std::to_string(k) + " inputs, got " +
           std::to_string(inputs.size()));
    }
  };
  if (op_kind == "matmul") { need(2); return matmul(inputs[0], inputs[1]); }
  if (op_kind == "add") { need(2); return add(inputs[0], inputs[1]); }
  if (op_kind == "mul") { need(2); return mul(inputs[0], inputs[1]); }
  if (op_kind == "concat") { return concat(inputs); }
  if (op_kind == "relu") { need(1); return relu(inputs[0]); }
  if (op_kind == "tanh") { need(1); return tanh(inputs[0]); }
  if (op_kind == "sigmoid") { need(1); return sigmoid(inputs[0]); }
  if (op_kind == "softmax") { need(1); return softmax(inputs[0]); }
  if (op_kind == "log_softmax") { need(1); return log_softmax(inputs[0]); }
  if (op_kind == "sum") { need(1); return sum(inputs[0]); }
  if (op_kind == "mean") { need(1); return mean(inputs[0]); }
  if (op_kind == "dot_rows") { need(2); return dot_rows(inputs[0], inputs[1]); }
  if (op_kind == "scale") { need(1); return scale(inputs[0], attr); }
  if (op_kind == "embedding_lookup") {
    need(2);
    const auto& iv = node(inputs[1].id).val;
    std::vector<int> idx(iv.size());
    for (size_t i = 0; i < iv.size(); ++i) {
      double d = iv[i];
      if (d != std::floor(d)) fail("embedding_lookup: non-integral index " + std::to_string(d));
      idx[i] = static_cast<int>(d);
    }
    return embedding_lookup(inputs[0], idx);
  }
  fail("unknown op_kind: '" + std::string(op_kind) + "'");
}

// --- backward ----------------------------------------------------------------

namespace {
void ensure_grad(Node& n) {
  if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
}
}  // namespace

void Tape::backward_node(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  const std::vector<double>& gy = n.grad;
  auto input = [&](size_t k) -> Node& { return nodes_[static_cast<size_t>(n.in[k])]; };
  auto want = [&](size_t k) { return input(k).requires_grad; };

  switch (n.op) {
    case OpKind::leaf:
      if (n.param != nullptr) {
        for (size_t i = 0; i < gy.size(); ++i) n.param->grad[i] += gy[i];
      }
      break;
    case OpKind::matmul: {
      Node& na = input(0);
      Node& nb = input(1);
      int m = rows_of(na.shape), k = cols_of(na.shape);
      int p = nb.shape.size() == 2 ? nb.shape[1] : 1;
      // view everything as matrices: A [m x k], B [k x p], Y [m x p]
      if (na.shape.size() == 1) { m = 1; k = na.shape[0]; }
      if (nb.shape.size() == 1) { p = 1; }
      CMatMap A(na.val.data(), m, k);
      CMatMap B(nb.val.data(), k, p);
      CMatMap GY(gy.data(), m, p);
      if (want(0)) {
        ensure_grad(na);
        MatMap GA(na.grad.data(), m, k);
        GA.noalias() += GY * B.transpose();
      }
      if (want(1)) {
        ensure_grad(nb);
        MatMap GB(nb.grad.data(), k, p);
        GB.noalias() += A.transpose() * GY;
      }
      break;
    }
    case OpKind::add: {
      Node& na = input(0);
      Node& nb = input(1);
      if (want(0)) {
        ensure_grad(na);
        for (size_t i = 0; i < gy.size(); ++i) na.grad[i] += gy[i];
      }
      if (want(1)) {
        ensure_grad(nb);
        if (nb.val.size() == gy.size()) {
          for (size_t i = 0; i < gy.size(); ++i) nb.grad[i] += gy[i];
        } else {  // row-vector broadcast: column sums
          int m = n.shape[0], c = n.shape[1];
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < c; ++j) nb.grad[static_cast<size_t>(j)] += gy[static_cast<size_t>(i * c + j)];
          }
        }
      }
      break;
    }
    case OpKind::sub: {
      if (want(0)) {
        Node& na = input(0);
        ensure_grad(na);
        for (size_t i = 0; i < gy.size(); ++i) na.grad[i] += gy[i];
      }
      if (want(1)) {
        Node& nb = input(1);
        ensure_grad(nb);
        for (size_t i = 0; i < gy.size(); ++i) nb.grad[i] -= gy[i];
      }
      break;
    }
    case OpKind::mul: {
      Node& na = input(0);
      Node& nb = input(1);
      if (want(0)) {
        ensure_grad(na);
        for (size_t i = 0; i < gy.size(); ++i) na.grad[i] += gy[i] * nb.val[i];
      }
      if (want(1)) {
        ensure_grad(nb);
        for (size_t i = 0; i < gy.size(); ++i) nb.grad[i] += gy[i] * na.val[i];
      }
      break;
    }
    case OpKind::concat: {
      for (size_t k = 0; k < n.in.size(); ++k) {
        Node& ni = input(k);
        if (!ni.requires_grad) continue;
        ensure_grad(ni);
        int off = n.isave[k];
        for (size_t i = 0; i < ni.val.size(); ++i) ni.grad[i] += gy[static_cast<size_t>(off) + i];
      }
      break;
    }
    case OpKind::relu: {
      if (want(0)) {
        Node& nx = input(0);
        ensure_grad(nx);
        // subgradient 0 at inputs <= 0
        for (size_t i = 0; i < gy.size(); ++i) {
          if (n.val[i] > 0.0) nx.grad[i] += gy[i];
        }
      }
      break;
    }
    case OpKind::tanh: {
      if (want(0)) {
        Node& nx = input(0);
        ensure_grad(nx);
        for (size_t i = 0; i < gy.size(); ++i) nx.grad[i] += gy[i] * (1.0 - n.val[i] * n.val[i]);
      }
      break;
    }
    case OpKind::sigmoid: {
      if (want(0)) {
        Node& nx = input(0);
        ensure_grad(nx);
        for (size_t i = 0; i < gy.size(); ++i) nx.grad[i] += gy[i] * n.val[i] * (1.0 - n.val[i]);
      }
      break;
    }
    case OpKind::softmax: {
      if (want(0)) {
        Node& nx = input(0);
        ensure_grad(nx);
        int rows = rows_of(n.shape), cols = cols_of(n.shape);
        for (int r = 0; r < rows; ++r) {
          const double* y = n.val.data() + static_cast<ptrdiff_t>(r) * cols;
          const double* g = gy.data() + static_cast<ptrdiff_t>(r) * cols;
          double* gx = nx.grad.data() + static_cast<ptrdiff_t>(r) * cols;
          double dot = 0.0;
          for (int j = 0; j < cols; ++j) dot += y[j] * g[j];
          for (int j = 0; j < cols; ++j) gx[j] += y[j] * (g[j] - dot);
        }
      }
      break;
    }
    case OpKind::log_softmax: {
      if (want(0)) {
        Node& nx = input(0);
        ensure_grad(nx);
        int rows = rows_of(n.shape), cols = cols_of(n.shape);
        for (int r = 0; r < rows; ++r) {
          const double* y = n.val.data() + static_cast<ptrdiff_t>(r) * cols;
          const double* g = gy.data() + static_cast<ptrdiff_t>(r) * cols;
          double* gx = nx.grad.data() + static_cast<ptrdiff_t>(r) * cols;
          double gsum = 0.0;
          for (int j = 0; j < cols; ++j) gsum += g[j];
          for (int j = 0; j < cols; ++j) gx[j] += g[j] - std::exp(y[j]) * gsum;
        }
      }
      break;
    }
    case OpKind::embedding_lookup: {
      if (want(0)) {
        Node& nt = input(0);
        ensure_grad(nt);
        int cols = nt.shape.size() == 2 ? nt.shape[1] : 1;
        for (size_t j = 0; j < n.isave.size(); ++j) {
          double* dst = nt.grad.data() + static_cast<ptrdiff_t>(n.isave[j]) * cols;
          const double* src = gy.data() + static_cast<ptrdiff_t>(j) * cols;
          for (int c = 0; c < cols; ++c) dst[c] += src[c];
        }
      }
      break;
    }
    case OpKind::sum: {
      if (want(0)) {
        Node& nx = input(0);
        ensure_grad(nx);
        double g = gy[0];
        for (double& v : nx.grad) v += g;
      }
      break;
    }
    case OpKind::mean: {
      if (want(0)) {
        Node& nx = input(0);
        ensure_grad(nx);
        double g = gy[0] / static_cast<double>(nx.val.size());
        for (double& v : nx.grad) v += g;
      }
      break;
    }
    case OpKind::dot_rows: {
      Node& na = input(0);
      Node& nb = input(1);
      int rows = rows_of(na.shape), cols = cols_of(na.shape);
      if (na.shape.size() == 1) { rows = 1; cols = na.shape[0]; }
      for (int r = 0; r < rows; ++r) {
        double g = gy[static_cast<size_t>(r)];
        if (want(0)) {
          ensure_grad(na);
          for (int c = 0; c < cols; ++c) {
            na.grad[static_cast<size_t>(r * cols + c)] += g * nb.val[static_cast<size_t>(r * cols + c)];
          }
        }
        if (want(1)) {
          ensure_grad(nb);
          for (int c = 0; c < cols; ++c) {
            nb.grad[static_cast<size_t>(r * cols + c)] += g * na.val[static_cast<size_t>(r * cols + c)];
          }
        }
      }
      break;
    }
    case OpKind::scale: {
      if (want(0)) {
        Node& nx = input(0);
        ensure_grad(nx);
        for (size_t i = 0; i < gy.size(); ++i) nx.grad[i] += n.s0 * gy[i];
      }
      break;
    }
    case OpKind::affine: {
      if (want(0)) {
        Node& nx = input(0);
        ensure_grad(nx);
        for (size_t i = 0; i < gy.size(); ++i) nx.grad[i] += n.s0 * gy[i];
      }
      break;
    }
    case OpKind::slice: {
      if (want(0)) {
        Node& nx = input(0);
        ensure_grad(nx);
        int begin = n.isave[0];
        for (size_t i = 0; i < gy.size(); ++i) nx.grad[static_cast<size_t>(begin) + i] += gy[i];
      }
      break;
    }
    case OpKind::reshape: {
      if (want(0)) {
        Node& nx = input(0);
        ensure_grad(nx);
        for (size_t i = 0; i < gy.size(); ++i) nx.grad[i] += gy[i];
      }
      break;
    }
    case OpKind::rows_dot: {
      Node& nt = input(0);
      Node& nv = input(1);
      int cols = nt.shape[1];
      if (want(0)) ensure_grad(nt);
      if (want(1)) ensure_grad(nv);
      for (size_t j = 0; j < n.isave.size(); ++j) {
        double g = gy[j];
        if (g == 0.0) continue;
        const double* row = nt.val.data() + static_cast<ptrdiff_t>(n.isave[j]) * cols;
        if (want(0)) {
          double* grow = nt.grad.data() + static_cast<ptrdiff_t>(n.isave[j]) * cols;
          for (int c = 0; c < cols; ++c) grow[c] += g * nv.val[static_cast<size_t>(c)];
        }
        if (want(1)) {
          for (int c = 0; c < cols; ++c) nv.grad[static_cast<size_t>(c)] += g * row[c];
        }
      }
      break;
    }
    case OpKind::rows_mix: {
      Node& nt = input(0);
      Node& nw = input(1);
      int cols = nt.shape[1];
      if (want(0)) {
        ensure_grad(nt);
        for (size_t j = 0; j < n.isave.size(); ++j) {
          double wj = nw.val[j];
          if (wj == 0.0) continue;
          double* grow = nt.grad.data() + static_cast<ptrdiff_t>(n.isave[j]) * cols;
          for (int c = 0; c < cols; ++c) grow[c] += wj * gy[static_cast<size_t>(c)];
        }
      }
      if (want(1)) {
        ensure_grad(nw);
        for (size_t j = 0; j < n.isave.size(); ++j) {
          const double* row = nt.val.data() + static_cast<ptrdiff_t>(n.isave[j]) * cols;
          double acc = 0.0;
          for (int c = 0; c < cols; ++c) acc += row[c] * gy[static_cast<size_t>(c)];
          nw.grad[j] += acc;
        }
      }
      break;
    }
    case OpKind::rows_sum: {
      size_t num_tables = n.in.size() - 1;
      size_t rows = n.isave.size() / num_tables;
      int cols = n.shape[1];
      for (size_t k = 0; k < num_tables; ++k) {
        Node& nt = input(k);
        if (!nt.requires_grad) continue;
        ensure_grad(nt);
        const int* idx = n.isave.data() + k * rows;
        for (size_t r = 0; r < rows; ++r) {
          double* dst = nt.grad.data() + static_cast<ptrdiff_t>(idx[r]) * cols;
          const double* src = gy.data() + static_cast<ptrdiff_t>(r) * cols;
          for (int c = 0; c < cols; ++c) dst[c] += src[c];
        }
      }
      Node& nb = input(num_tables);
      if (nb.requires_grad) {
        ensure_grad(nb);
        for (size_t r = 0; r < rows; ++r) {
          const double* src = gy.data() + static_cast<ptrdiff_t>(r) * cols;
          for (int c = 0; c < cols; ++c) nb.grad[static_cast<size_t>(c)] += src[c];
        }
      }
      break;
    }
    case OpKind::gumbel_softmax_st: {
      if (want(0)) {
        Node& nx = input(0);
        ensure_grad(nx);
        // straight-through: substitute the soft sample's Jacobian
        const std::vector<double>& y = n.fsave;
        double dot = 0.0;
        for (size_t i = 0; i < gy.size(); ++i) dot += y[i] * gy[i];
        double inv_tau = 1.0 / n.s0;
        for (size_t i = 0; i < gy.size(); ++i) nx.grad[i] += inv_tau * y[i] * (gy[i] - dot);
      }
      break;
    }
  }
}

void Tape::backward(Tensor loss) {
  check_same_tape(loss);
  Node& root = mut(loss);
  if (numel(root.shape) != 1) {
    fail("backward: loss must be scalar, got " + shape_str(root.shape));
  }
  if (!root.requires_grad) return;  // nothing differentiable upstream
  ensure_grad(root);
  root.grad[0] += 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad || n.grad.empty()) continue;
    backward_node(id);
  }
}

void Tape::reset() {
  nodes_.clear();
  param_leafs_.clear();
}

const std::vector<double>& Tape::val(Tensor t) const {
  check_same_tape(t);
  return node(t.id).val;
}

const std::vector<double>& Tape::grad(Tensor t) const {
  check_same_tape(t);
  return node(t.id).grad;
}

// --- GRU cell ------------------------------------------------------------------

Tensor gru_cell(Tape& tape, const GruWeights& w, Tensor x, Tensor h) {
  int hs = w.hidden_size;
  if (x.shape() != Shape{w.input_size}) {
    fail("gru_cell: input " + shape_str(x.shape()) + " does not match weights expecting [" +
         std::to_string(w.input_size) + "]");
  }
  if (h.shape() != Shape{hs}) {
    fail("gru_cell: hidden " + shape_str(h.shape()) + " does not match hidden size " + std::to_string(hs));
  }
  Tensor gx = tape.add(tape.matmul(x, w.wx), w.bx);
  Tensor gh = tape.add(tape.matmul(h, w.wh), w.bh);
  Tensor r = tape.sigmoid(tape.add(tape.slice(gx, 0, hs), tape.slice(gh, 0, hs)));
  Tensor z = tape.sigmoid(tape.add(tape.slice(gx, hs, 2 * hs), tape.slice(gh, hs, 2 * hs)));
  Tensor cand = tape.tanh(tape.add(tape.slice(gx, 2 * hs, 3 * hs),
                                   tape.mul(r, tape.slice(gh, 2 * hs, 3 * hs))));
  // h' = (1-z)*n + z*h, written as n + z*(h - n)
  return tape.add(cand, tape.mul(z, tape.sub(h, cand)));
}

}  // namespace sigbandit::ad
