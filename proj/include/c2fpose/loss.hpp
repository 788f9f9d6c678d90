#pragma once

#include "c2fpose/model.hpp"

namespace c2fpose {

/// Learned log-variance balance terms, optimized jointly with the model
/// weights. The orientation term starts lower so rotation errors are weighted
/// up early in training.
template <typename S>
struct LossParams {
  ad::Param<S> s_x;
  ad::Param<S> s_q;

  explicit LossParams(double sx0 = 0.0, double sq0 = -3.0)
      : s_x("loss.s_x", MatX<S>::Constant(1, 1, S(sx0))),
        s_q("loss.s_q", MatX<S>::Constant(1, 1, S(sq0))) {}

  std::vector<ad::Param<S>*> params() { return {&s_x, &s_q}; }
};

template <typename S>
struct SupervisionTarget {
  Vec3<S> position = Vec3<S>::Zero();
  Quaternion<S> orientation;  // unit canonical
  int scene = 0;
  int kx = 0;
  int kq = 0;
};

/// ‖x0 − x‖₂ as a 1x1 graph node; x is 1x3.
template <typename S>
ad::NodePtr<S> position_loss(const ad::NodePtr<S>& x, const Vec3<S>& x0) {
  return ad::l2_norm(ad::sub(ad::constant<S>(x0.transpose()), x));
}

/// ‖q0 − q/‖q‖‖₂; q is the raw 1x4 centroid-plus-residual sum, normalized
/// here and nowhere earlier.
template <typename S>
ad::NodePtr<S> orientation_loss(const ad::NodePtr<S>& q, const Quaternion<S>& q0) {
  if (!(q->value.norm() > S(0))) {
    throw InvalidQuaternionError("orientation_loss: zero-norm quaternion");
  }
  auto unit = ad::div_scalar(q, ad::l2_norm(q));
  return ad::l2_norm(ad::sub(ad::constant<S>(q0.coeffs().transpose()), unit));
}

/// L_x·exp(−s_x) + s_x + L_q·exp(−s_q) + s_q, all 1x1 nodes.
template <typename S>
ad::NodePtr<S> pose_loss(const ad::NodePtr<S>& l_x, const ad::NodePtr<S>& l_q,
                         nn::LeafCache<S>& cache, LossParams<S>& params) {
  auto sx = cache.get(params.s_x);
  auto sq = cache.get(params.s_q);
  auto x_term = ad::add(ad::cmul(l_x, ad::exp(ad::neg(sx))), sx);
  auto q_term = ad::add(ad::cmul(l_q, ad::exp(ad::neg(sq))), sq);
  return ad::add(x_term, q_term);
}

/// −log_probs[index] for a 1xK row of normalized log-probabilities.
template <typename S>
ad::NodePtr<S> nll(const ad::NodePtr<S>& log_probs, int index) {
  if (index < 0 || index >= log_probs->value.cols()) {
    throw ConfigError("nll: index " + std::to_string(index) + " out of range for " +
                      std::to_string(log_probs->value.cols()) + " classes");
  }
  return ad::neg(ad::pick(log_probs, 0, index));
}

template <typename S>
struct LossBreakdown {
  ad::NodePtr<S> total;  // 1x1, backpropagatable
  S l_x{0}, l_q{0}, l_p{0};
  S nll_scene{0}, nll_cx{0}, nll_cq{0};
};

/// Overall loss: L_p + NLL(scene) + NLL(c_x) + NLL(c_q). The model output
/// must be teacher-forced so the classifier heads match the target indices.
template <typename S>
LossBreakdown<S> multi_scene_loss(nn::LeafCache<S>& cache, const ModelOutput<S>& output,
                                  const SupervisionTarget<S>& target, LossParams<S>& params) {
  if (output.scene != target.scene) {
    throw ConfigError("multi_scene_loss: output was routed through scene " +
                      std::to_string(output.scene) + ", target is scene " +
                      std::to_string(target.scene));
  }
  LossBreakdown<S> b;
  auto l_x = position_loss(output.position, target.position);
  auto l_q = orientation_loss(output.quaternion, target.orientation);
  auto l_p = pose_loss(l_x, l_q, cache, params);
  auto n_s = nll(output.scene_log_probs, target.scene);
  auto n_x = nll(output.cx_log_probs, target.kx);
  auto n_q = nll(output.cq_log_probs, target.kq);
  b.total = ad::add(ad::add(l_p, n_s), ad::add(n_x, n_q));
  b.l_x = l_x->value(0, 0);
  b.l_q = l_q->value(0, 0);
  b.l_p = l_p->value(0, 0);
  b.nll_scene = n_s->value(0, 0);
  b.nll_cx = n_x->value(0, 0);
  b.nll_cq = n_q->value(0, 0);
  return b;
}

}  // namespace c2fpose
