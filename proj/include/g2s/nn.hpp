#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "g2s/adamw.hpp"
#include "g2s/rng.hpp"
#include "g2s/tensor.hpp"

namespace g2s {

/// Named trainable tensors in creation order.
class ParameterStore {
 public:
  /// Normal(0, stddev) entries, or zeros when stddev is 0.
  Tensor create(const std::string& name, Shape shape, double stddev, Rng& rng);
  Tensor create_constant(const std::string& name, Shape shape, double value);

  const std::vector<NamedTensor>& all() const { return params_; }
  /// Parameters whose name starts with `prefix`.
  std::vector<NamedTensor> with_prefix(const std::string& prefix) const;
  Tensor get(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<NamedTensor> params_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in,
         std::size_t out, Rng& rng);

  /// (n x in) -> (n x out)
  Tensor operator()(const Tensor& x) const;

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

 private:
  Tensor w_, b_;
  std::size_t in_ = 0, out_ = 0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim);
  Tensor operator()(const Tensor& x) const;

 private:
  Tensor gamma_, beta_;
};

/// Linear, GELU, Linear.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, std::size_t in,
      std::size_t hidden, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const;

 private:
  Linear fc1_, fc2_;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& name,
                     std::size_t dim, std::size_t heads, Rng& rng);
  /// Self-attention over the rows of (n x dim).
  Tensor operator()(const Tensor& x) const;

 private:
  Linear qkv_, proj_;
  std::size_t dim_ = 0, heads_ = 1;
};

/// Pre-norm transformer block.
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParameterStore& store, const std::string& name,
                   std::size_t dim, std::size_t heads, std::size_t mlp_hidden,
                   Rng& rng);
  Tensor operator()(const Tensor& x) const;

 private:
  LayerNorm ln1_, ln2_;
  MultiHeadAttention attn_;
  Mlp mlp_;
};

/// Blocks followed by a final layer norm.
class TransformerStack {
 public:
  TransformerStack() = default;
  TransformerStack(ParameterStore& store, const std::string& name,
                   std::size_t depth, std::size_t dim, std::size_t heads,
                   std::size_t mlp_hidden, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  std::size_t depth() const { return blocks_.size(); }

 private:
  std::vector<TransformerBlock> blocks_;
  LayerNorm norm_;
};

}  // namespace g2s
