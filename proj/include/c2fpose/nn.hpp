#pragma once

#include <random>
#include <unordered_map>

#include "c2fpose/autodiff.hpp"

namespace c2fpose::nn {

using ad::NodePtr;
using ad::Param;
using ad::ParamStore;

/// One leaf node per parameter per graph; keeps batched forwards from
/// duplicating weight copies and lets gradients from all samples of a step
/// flow into a single leaf.
template <typename S>
struct LeafCache {
  std::unordered_map<const Param<S>*, NodePtr<S>> nodes;
  NodePtr<S> get(Param<S>& p) {
    auto it = nodes.find(&p);
    if (it != nodes.end()) return it->second;
    auto n = ad::leaf(p);
    nodes.emplace(&p, n);
    return n;
  }
};

template <typename S>
MatX<S> xavier_uniform(int rows, int cols, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / double(rows + cols));
  std::uniform_real_distribution<double> u(-bound, bound);
  MatX<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = S(u(rng));
  return m;
}

template <typename S>
MatX<S> gaussian(int rows, int cols, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, sigma);
  MatX<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = S(g(rng));
  return m;
}

/// Inverted dropout; active only when an rng is supplied (train mode).
template <typename S>
NodePtr<S> dropout(const NodePtr<S>& x, double p, std::mt19937_64* rng) {
  if (!rng || p <= 0.0) return x;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MatX<S> mask(x->value.rows(), x->value.cols());
  const S keep_scale = S(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = u(*rng) >= p ? keep_scale : S(0);
  }
  return ad::cmul(x, ad::constant(std::move(mask)));
}

template <typename S>
struct Linear {
  Param<S>* w = nullptr;
  Param<S>* b = nullptr;

  Linear() = default;
  Linear(ParamStore<S>& store, const std::string& name, int in, int out,
         std::mt19937_64& rng) {
    w = &store.create(name + ".w", xavier_uniform<S>(in, out, rng));
    b = &store.create(name + ".b", MatX<S>::Zero(1, out));
  }
  NodePtr<S> forward(LeafCache<S>& c, const NodePtr<S>& x) const {
    return ad::add_rowwise(ad::matmul(x, c.get(*w)), c.get(*b));
  }
};

template <typename S>
struct LayerNorm {
  Param<S>* gamma = nullptr;
  Param<S>* beta = nullptr;

  LayerNorm() = default;
  LayerNorm(ParamStore<S>& store, const std::string& name, int dim) {
    gamma = &store.create(name + ".g", MatX<S>::Ones(1, dim));
    beta = &store.create(name + ".b", MatX<S>::Zero(1, dim));
  }
  NodePtr<S> forward(LeafCache<S>& c, const NodePtr<S>& x) const {
    return ad::layer_norm(x, c.get(*gamma), c.get(*beta));
  }
};

/// Head-averaged attention weights plus the L2 norm of each value row,
/// captured for visualization and scene ranking.
template <typename S>
struct AttnCapture {
  MatX<S> weights;  // query rows x key rows, averaged over heads
};

template <typename S>
struct MultiHeadAttention {
  Linear<S> wq, wk, wv, wo;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<S>& store, const std::string& name, int dim, int heads_,
                     std::mt19937_64& rng)
      : wq(store, name + ".wq", dim, dim, rng),
        wk(store, name + ".wk", dim, dim, rng),
        wv(store, name + ".wv", dim, dim, rng),
        wo(store, name + ".wo", dim, dim, rng),
        heads(heads_) {}

  /// query_in/key_in may carry positional terms; value_in never does.
  NodePtr<S> forward(LeafCache<S>& c, const NodePtr<S>& query_in, const NodePtr<S>& key_in,
                     const NodePtr<S>& value_in, AttnCapture<S>* capture = nullptr) const {
    const int dim = static_cast<int>(wq.w->value.cols());
    const int dh = dim / heads;
    auto q = wq.forward(c, query_in);
    auto k = wk.forward(c, key_in);
    auto v = wv.forward(c, value_in);
    const S inv_sqrt = S(1) / std::sqrt(S(dh));
    std::vector<NodePtr<S>> outs;
    MatX<S> avg;
    for (int h = 0; h < heads; ++h) {
      auto qh = ad::slice_cols(q, h * dh, dh);
      auto kh = ad::slice_cols(k, h * dh, dh);
      auto vh = ad::slice_cols(v, h * dh, dh);
      auto attn = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt));
      if (capture) {
        if (h == 0) {
          avg = attn->value;
        } else {
          avg += attn->value;
        }
      }
      outs.push_back(ad::matmul(attn, vh));
    }
    if (capture) capture->weights = avg / S(heads);
    return wo.forward(c, ad::hcat(outs));
  }
};

template <typename S>
struct Mlp {
  Linear<S> fc1, fc2;

  Mlp() = default;
  Mlp(ParamStore<S>& store, const std::string& name, int dim, int hidden, int out,
      std::mt19937_64& rng)
      : fc1(store, name + ".fc1", dim, hidden, rng), fc2(store, name + ".fc2", hidden, out, rng) {}
  NodePtr<S> forward(LeafCache<S>& c, const NodePtr<S>& x) const {
    return fc2.forward(c, ad::gelu(fc1.forward(c, x)));
  }
};

/// Pre-norm transformer encoder layer; the positional term is re-added to
/// queries and keys (never values) at the attention step.
template <typename S>
struct EncoderLayer {
  LayerNorm<S> ln1, ln2;
  MultiHeadAttention<S> attn;
  Mlp<S> mlp;

  EncoderLayer() = default;
  EncoderLayer(ParamStore<S>& store, const std::string& name, int dim, int heads, int hidden,
               std::mt19937_64& rng)
      : ln1(store, name + ".ln1", dim),
        ln2(store, name + ".ln2", dim),
        attn(store, name + ".attn", dim, heads, rng),
        mlp(store, name + ".mlp", dim, hidden, dim, rng) {}

  NodePtr<S> forward(LeafCache<S>& c, const NodePtr<S>& z, const NodePtr<S>& pos, double p,
                     std::mt19937_64* rng, AttnCapture<S>* capture = nullptr) const {
    auto normed = ln1.forward(c, z);
    auto qk = ad::add(normed, pos);
    auto z1 = ad::add(z, dropout<S>(attn.forward(c, qk, qk, normed, capture), p, rng));
    auto z2 = ad::add(z1, dropout<S>(mlp.forward(c, ln2.forward(c, z1)), p, rng));
    return z2;
  }
};

template <typename S>
struct Encoder {
  std::vector<EncoderLayer<S>> layers;
  LayerNorm<S> final_ln;

  Encoder() = default;
  Encoder(ParamStore<S>& store, const std::string& name, int num_layers, int dim, int heads,
          int hidden, std::mt19937_64& rng)
      : final_ln(store, name + ".final_ln", dim) {
    for (int l = 0; l < num_layers; ++l) {
      layers.emplace_back(store, name + ".l" + std::to_string(l), dim, heads, hidden, rng);
    }
  }

  NodePtr<S> forward(LeafCache<S>& c, const NodePtr<S>& z0, const NodePtr<S>& pos, double p,
                     std::mt19937_64* rng,
                     std::vector<AttnCapture<S>>* captures = nullptr) const {
    auto z = z0;
    for (const auto& layer : layers) {
      AttnCapture<S> cap;
      z = layer.forward(c, z, pos, p, rng, captures ? &cap : nullptr);
      if (captures) captures->push_back(std::move(cap));
    }
    return final_ln.forward(c, z);
  }
};

/// Pre-norm decoder layer: self-attention over the query rows (no positional
/// term beyond the learned queries), cross-attention with the positional
/// encoding re-added to the memory keys, then the MLP.
template <typename S>
struct DecoderLayer {
  LayerNorm<S> ln1, ln2, ln3;
  MultiHeadAttention<S> self_attn, cross_attn;
  Mlp<S> mlp;

  DecoderLayer() = default;
  DecoderLayer(ParamStore<S>& store, const std::string& name, int dim, int heads, int hidden,
               std::mt19937_64& rng)
      : ln1(store, name + ".ln1", dim),
        ln2(store, name + ".ln2", dim),
        ln3(store, name + ".ln3", dim),
        self_attn(store, name + ".self", dim, heads, rng),
        cross_attn(store, name + ".cross", dim, heads, rng),
        mlp(store, name + ".mlp", dim, hidden, dim, rng) {}

  NodePtr<S> forward(LeafCache<S>& c, const NodePtr<S>& t, const NodePtr<S>& memory,
                     const NodePtr<S>& mem_pos, double p, std::mt19937_64* rng,
                     AttnCapture<S>* capture = nullptr) const {
    auto s_in = ln1.forward(c, t);
    auto t1 = ad::add(t, dropout<S>(self_attn.forward(c, s_in, s_in, s_in), p, rng));
    auto c_in = ln2.forward(c, t1);
    auto keys = ad::add(memory, mem_pos);
    auto t2 = ad::add(
        t1, dropout<S>(cross_attn.forward(c, c_in, keys, memory, capture), p, rng));
    auto t3 = ad::add(t2, dropout<S>(mlp.forward(c, ln3.forward(c, t2)), p, rng));
    return t3;
  }
};

template <typename S>
struct Decoder {
  std::vector<DecoderLayer<S>> layers;
  LayerNorm<S> final_ln;

  Decoder() = default;
  Decoder(ParamStore<S>& store, const std::string& name, int num_layers, int dim, int heads,
          int hidden, std::mt19937_64& rng)
      : final_ln(store, name + ".final_ln", dim) {
    for (int l = 0; l < num_layers; ++l) {
      layers.emplace_back(store, name + ".l" + std::to_string(l), dim, heads, hidden, rng);
    }
  }

  NodePtr<S> forward(LeafCache<S>& c, const NodePtr<S>& queries, const NodePtr<S>& memory,
                     const NodePtr<S>& mem_pos, double p, std::mt19937_64* rng,
                     std::vector<AttnCapture<S>>* captures = nullptr) const {
    auto t = queries;
    for (const auto& layer : layers) {
      AttnCapture<S> cap;
      t = layer.forward(c, t, memory, mem_pos, p, rng, captures ? &cap : nullptr);
      if (captures) captures->push_back(std::move(cap));
    }
    return final_ln.forward(c, t);
  }
};

}  // namespace c2fpose::nn
