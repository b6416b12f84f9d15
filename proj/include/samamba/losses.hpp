#pragma once

// Segmentation losses on logits; all reductions run over every element of
// the batch.

#include "samamba/ops.hpp"

namespace samamba {

inline constexpr double kLossEps = 1e-6;
inline constexpr double kFocalGamma = 2.0;
inline constexpr double kFocalAlpha = 0.25;

namespace detail {

template <typename T>
void check_loss_shapes(const Tensor<T>& logits, const Tensor<T>& target) {
  if (logits.shape() != target.shape())
    throw ShapeError("loss: logits " + to_string(logits.shape()) + " vs target " + to_string(target.shape()));
}

template <typename T>
Tensor<T> one_minus(const Tensor<T>& x) {
  return add_scalar(neg(x), T(1));
}

}  // namespace detail

/// 1 - (sum p t + eps) / (sum p + sum t - sum p t + eps), p = sigmoid(logits).
template <typename T>
Tensor<T> soft_iou_loss(const Tensor<T>& logits, const Tensor<T>& target, T eps = T(kLossEps)) {
  detail::check_loss_shapes(logits, target);
  const Tensor<T> p = sigmoid(logits);
  const Tensor<T> inter = sum(mul(p, target));
  const Tensor<T> uni = sub(add(sum(p), sum(target)), inter);
  return detail::one_minus(div(add_scalar(inter, eps), add_scalar(uni, eps)));
}

/// 1 - (2 sum p t + eps) / (sum p + sum t + eps).
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& logits, const Tensor<T>& target, T eps = T(kLossEps)) {
  detail::check_loss_shapes(logits, target);
  const Tensor<T> p = sigmoid(logits);
  const Tensor<T> num = add_scalar(mul_scalar(sum(mul(p, target)), T(2)), eps);
  const Tensor<T> den = add_scalar(add(sum(p), sum(target)), eps);
  return detail::one_minus(div(num, den));
}

/// mean of -alpha_t (1 - p_t)^gamma log p_t, with log p_t from log-sigmoid.
template <typename T>
Tensor<T> focal_loss(const Tensor<T>& logits, const Tensor<T>& target, T gamma = T(kFocalGamma),
                     T alpha = T(kFocalAlpha)) {
  detail::check_loss_shapes(logits, target);
  const Tensor<T> not_t = detail::one_minus(target);
  const Tensor<T> p = sigmoid(logits);
  const Tensor<T> pt = add(mul(p, target), mul(detail::one_minus(p), not_t));
  const Tensor<T> log_pt = add(mul(log_sigmoid(logits), target), mul(log_sigmoid(neg(logits)), not_t));
  const Tensor<T> alpha_t = add(mul_scalar(target, alpha), mul_scalar(not_t, T(1) - alpha));
  Tensor<T> term = mul(alpha_t, log_pt);
  if (gamma != T(0)) term = mul(term, pow_scalar(detail::one_minus(pt), gamma));
  return neg(mean(term));
}

struct LossParts {
  double soft_iou = 0, dice = 0, focal = 0;
  double total() const { return soft_iou + dice + focal; }
};

/// SoftIoU + Dice + Focal, unweighted.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& logits, const Tensor<T>& target, LossParts* parts = nullptr) {
  const Tensor<T> a = soft_iou_loss(logits, target);
  const Tensor<T> b = dice_loss(logits, target);
  const Tensor<T> c = focal_loss(logits, target);
  if (parts) *parts = {static_cast<double>(a.item()), static_cast<double>(b.item()), static_cast<double>(c.item())};
  return add(add(a, b), c);
}

}  // namespace samamba
