#include "g2s/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "g2s/error.hpp"
#include "g2s/ops.hpp"

namespace g2s {

Tensor ParameterStore::create(const std::string& name, Shape shape,
                              double stddev, Rng& rng) {
  for (const auto& p : params_)
    if (p.name == name) throw std::invalid_argument("duplicate parameter " + name);
  Tensor t = stddev == 0.0 ? Tensor::zeros(std::move(shape), true)
                           : Tensor::randn(std::move(shape), rng, stddev, true);
  params_.push_back({name, t});
  return t;
}

Tensor ParameterStore::create_constant(const std::string& name, Shape shape,
                                       double value) {
  for (const auto& p : params_)
    if (p.name == name) throw std::invalid_argument("duplicate parameter " + name);
  Tensor t = Tensor::full(std::move(shape), value, true);
  params_.push_back({name, t});
  return t;
}

std::vector<NamedTensor> ParameterStore::with_prefix(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  for (const auto& p : params_)
    if (p.name.starts_with(prefix)) out.push_back(p);
  return out;
}

Tensor ParameterStore::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  throw std::out_of_range("no parameter named " + name);
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in,
               std::size_t out, Rng& rng)
    : in_(in), out_(out) {
  // Xavier-normal
  w_ = store.create(name + ".w", {in, out},
                    std::sqrt(2.0 / static_cast<double>(in + out)), rng);
  b_ = store.create(name + ".b", {out}, 0.0, rng);
}

Tensor Linear::operator()(const Tensor& x) const { return matmul(x, w_) + b_; }

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name,
                     std::size_t dim) {
  gamma_ = store.create_constant(name + ".gamma", {dim}, 1.0);
  beta_ = store.create_constant(name + ".beta", {dim}, 0.0);
}

Tensor LayerNorm::operator()(const Tensor& x) const {
  return layer_norm(x) * gamma_ + beta_;
}

Mlp::Mlp(ParameterStore& store, const std::string& name, std::size_t in,
         std::size_t hidden, std::size_t out, Rng& rng)
    : fc1_(store, name + ".fc1", in, hidden, rng),
      fc2_(store, name + ".fc2", hidden, out, rng) {}

Tensor Mlp::operator()(const Tensor& x) const { return fc2_(gelu(fc1_(x))); }

MultiHeadAttention::MultiHeadAttention(ParameterStore& store,
                                       const std::string& name,
                                       std::size_t dim, std::size_t heads,
                                       Rng& rng)
    : qkv_(store, name + ".qkv", dim, 3 * dim, rng),
      proj_(store, name + ".proj", dim, dim, rng),
      dim_(dim),
      heads_(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("MultiHeadAttention: dim " + std::to_string(dim) +
                                " not divisible by heads " + std::to_string(heads));
  }
}

Tensor MultiHeadAttention::operator()(const Tensor& x) const {
  if (x.dim() != 2 || x.size(1) != dim_) {
    throw ShapeError("attention", {x.shape(), {dim_}});
  }
  const Tensor qkv = qkv_(x);
  const std::size_t hd = dim_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> outs;
  outs.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const Tensor q = slice(qkv, 1, h * hd, hd);
    const Tensor k = slice(qkv, 1, dim_ + h * hd, hd);
    const Tensor v = slice(qkv, 1, 2 * dim_ + h * hd, hd);
    outs.push_back(matmul(softmax(matmul(q, transpose(k)) * scale), v));
  }
  return proj_(heads_ == 1 ? outs[0] : concat(outs, 1));
}

TransformerBlock::TransformerBlock(ParameterStore& store,
                                   const std::string& name, std::size_t dim,
                                   std::size_t heads, std::size_t mlp_hidden,
                                   Rng& rng)
    : ln1_(store, name + ".ln1", dim),
      ln2_(store, name + ".ln2", dim),
      attn_(store, name + ".attn", dim, heads, rng),
      mlp_(store, name + ".mlp", dim, mlp_hidden, dim, rng) {}

Tensor TransformerBlock::operator()(const Tensor& x) const {
  const Tensor h = x + attn_(ln1_(x));
  return h + mlp_(ln2_(h));
}

TransformerStack::TransformerStack(ParameterStore& store,
                                   const std::string& name, std::size_t depth,
                                   std::size_t dim, std::size_t heads,
                                   std::size_t mlp_hidden, Rng& rng) {
  for (std::size_t i = 0; i < depth; ++i) {
    blocks_.emplace_back(store, name + "." + std::to_string(i), dim, heads,
                         mlp_hidden, rng);
  }
  norm_ = LayerNorm(store, name + ".norm", dim);
}

Tensor TransformerStack::operator()(const Tensor& x) const {
  Tensor h = x;
  for (const auto& b : blocks_) h = b(h);
  return norm_(h);
}

}  // namespace g2s
