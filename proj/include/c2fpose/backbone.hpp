#pragma once

#include <string>
#include <vector>

#include "c2fpose/nn.hpp"

namespace c2fpose {

struct ConvSpec {
  int in_ch, out_ch, kernel, stride, pad;
  int tap = 0;  // 0 = trunk, 1 = orientation tap (A_q), 2 = position tap (A_x)
};

struct TapShape {
  int h = 0, w = 0, c = 0;
  int tokens() const { return h * w; }
};

/// Feature-map tensors are stored as (H*W) x C matrices, spatial positions
/// flattened row-major (row index = i*W + j).
struct BackboneSpec {
  std::string name;
  int input_h = 0, input_w = 0, input_ch = 3;
  std::vector<ConvSpec> convs;  // tap layers branch off and do not advance the trunk

  static BackboneSpec preset(const std::string& name) {
    BackboneSpec s;
    s.name = name;
    auto trunk = [&](int in, int out, int stride) {
      s.convs.push_back({in, out, 3, stride, 1, 0});
    };
    auto tap = [&](int in, int out, int which) { s.convs.push_back({in, out, 3, 1, 1, which}); };
    if (name == "tiny") {
      s.input_h = s.input_w = 24;
      trunk(3, 8, 2);    // 12x12
      trunk(8, 8, 2);    // 6x6
      tap(8, 6, 1);      // A_q: 6x6x6
      trunk(8, 8, 1);    // 6x6
      tap(8, 8, 2);      // A_x: 6x6x8
    } else if (name == "desk") {
      s.input_h = s.input_w = 64;
      trunk(3, 8, 2);    // 32
      trunk(8, 12, 2);   // 16
      trunk(12, 16, 2);  // 8
      tap(16, 16, 1);    // A_q: 8x8x16
      trunk(16, 32, 2);  // 4
      tap(32, 32, 2);    // A_x: 4x4x32
    } else if (name == "full") {
      s.input_h = s.input_w = 224;
      trunk(3, 32, 2);  // 112
      for (int i = 0; i < 6; ++i) trunk(32, 32, 1);
      trunk(32, 64, 2);  // 56
      for (int i = 0; i < 5; ++i) trunk(64, 64, 1);
      trunk(64, 128, 2);  // 28
      for (int i = 0; i < 10; ++i) trunk(128, 128, 1);
      tap(128, 40, 1);     // A_q: 28x28x40
      trunk(128, 256, 2);  // 14
      for (int i = 0; i < 6; ++i) trunk(256, 256, 1);
      trunk(256, 512, 1);
      trunk(512, 512, 1);
      trunk(512, 256, 1);
      tap(256, 112, 2);  // A_x: 14x14x112
    } else {
      throw ConfigError("unknown backbone preset: " + name);
    }
    return s;
  }
};

namespace detail {

inline int conv_out(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

/// Row indices into the flattened input for an im2col gather; -1 marks
/// zero-padding rows.
inline std::vector<int> im2col_indices(int h, int w, int kernel, int stride, int pad) {
  const int oh = conv_out(h, kernel, stride, pad);
  const int ow = conv_out(w, kernel, stride, pad);
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(oh) * ow * kernel * kernel);
  for (int i = 0; i < oh; ++i) {
    for (int j = 0; j < ow; ++j) {
      for (int ki = 0; ki < kernel; ++ki) {
        for (int kj = 0; kj < kernel; ++kj) {
          const int ii = i * stride - pad + ki;
          const int jj = j * stride - pad + kj;
          idx.push_back((ii >= 0 && ii < h && jj >= 0 && jj < w) ? ii * w + jj : -1);
        }
      }
    }
  }
  return idx;
}

}  // namespace detail

template <typename S>
struct BackboneOutput {
  ad::NodePtr<S> a_x, a_q;  // (H*W) x C activation maps
};

template <typename S>
class Backbone {
 public:
  Backbone() = default;
  Backbone(ad::ParamStore<S>& store, const BackboneSpec& spec, std::mt19937_64& rng)
      : spec_(spec) {
    int h = spec.input_h, w = spec.input_w;
    for (std::size_t i = 0; i < spec.convs.size(); ++i) {
      const ConvSpec& cs = spec.convs[i];
      const std::string name = "backbone.conv" + std::to_string(i);
      weights_.push_back(&store.create(
          name + ".w",
          nn::xavier_uniform<S>(cs.kernel * cs.kernel * cs.in_ch, cs.out_ch, rng)));
      biases_.push_back(&store.create(name + ".b", MatX<S>::Zero(1, cs.out_ch)));
      const int ho = detail::conv_out(h, cs.kernel, cs.stride, cs.pad);
      const int wo = detail::conv_out(w, cs.kernel, cs.stride, cs.pad);
      if (cs.tap == 1) {
        tap_q_ = {ho, wo, cs.out_ch};
      } else if (cs.tap == 2) {
        tap_x_ = {ho, wo, cs.out_ch};
      } else {
        h = ho;
        w = wo;
      }
    }
    if (tap_q_.c == 0 || tap_x_.c == 0) throw ConfigError("backbone spec missing a tap");
  }

  const BackboneSpec& spec() const { return spec_; }
  const TapShape& tap_x() const { return tap_x_; }
  const TapShape& tap_q() const { return tap_q_; }

  /// image: (input_h * input_w) x input_ch, row-major spatial flattening.
  BackboneOutput<S> forward(nn::LeafCache<S>& cache, const ad::NodePtr<S>& image) const {
    if (image->value.rows() != Eigen::Index(spec_.input_h) * spec_.input_w ||
        image->value.cols() != spec_.input_ch) {
      throw ConfigError("backbone: expected " + std::to_string(spec_.input_h) + "x" +
                        std::to_string(spec_.input_w) + "x" + std::to_string(spec_.input_ch) +
                        " input, got " + std::to_string(image->value.rows()) + "x" +
                        std::to_string(image->value.cols()) + " rows x channels");
    }
    BackboneOutput<S> out;
    ad::NodePtr<S> x = image;
    int h = spec_.input_h, w = spec_.input_w;
    for (std::size_t i = 0; i < spec_.convs.size(); ++i) {
      const ConvSpec& cs = spec_.convs[i];
      auto idx = detail::im2col_indices(h, w, cs.kernel, cs.stride, cs.pad);
      auto patches = ad::group_rows(ad::gather_rows(x, std::move(idx)), cs.kernel * cs.kernel);
      auto y = ad::gelu(ad::add_rowwise(ad::matmul(patches, cache.get(*weights_[i])),
                                        cache.get(*biases_[i])));
      if (cs.tap == 1) {
        out.a_q = y;
      } else if (cs.tap == 2) {
        out.a_x = y;
      } else {
        x = y;
        h = detail::conv_out(h, cs.kernel, cs.stride, cs.pad);
        w = detail::conv_out(w, cs.kernel, cs.stride, cs.pad);
      }
    }
    return out;
  }

  /// Closed-form parameter count of this backbone.
  static Eigen::Index param_count(const BackboneSpec& spec) {
    Eigen::Index n = 0;
    for (const auto& cs : spec.convs) {
      n += Eigen::Index(cs.kernel) * cs.kernel * cs.in_ch * cs.out_ch + cs.out_ch;
    }
    return n;
  }

 private:
  BackboneSpec spec_;
  std::vector<ad::Param<S>*> weights_;
  std::vector<ad::Param<S>*> biases_;
  TapShape tap_x_, tap_q_;
};

}  // namespace c2fpose
