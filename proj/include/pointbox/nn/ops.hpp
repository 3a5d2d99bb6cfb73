// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "pointbox/nn/tape.hpp"

namespace pointbox::nn {

// Elementwise and structural ops. Feature maps are single images laid out
// [C, H, W]; batched RoI tensors are [R, C, ...].

template <typename T> Var add(Tape<T>& tape, Var a, Var b);
template <typename T> Var scale(Tape<T>& tape, Var a, T factor);
template <typename T> Var relu(Tape<T>& tape, Var a);
/// Copies the value and blocks gradient flow.
template <typename T> Var detach(Tape<T>& tape, Var a);
template <typename T> Var reshape(Tape<T>& tape, Var a, std::vector<int> shape);
/// Sum of all elements, as a rank-0 tensor.
template <typename T> Var sum(Tape<T>& tape, Var a);

/// 2-D convolution of x [C,H,W] with w [O,C,k,k]; b [O] is optional.
template <typename T> Var conv2d(Tape<T>& tape, Var x, Var w, Var b, int stride, int pad);
template <typename T> Var group_norm(Tape<T>& tape, Var x, Var gamma, Var beta, int groups);
template <typename T> Var max_pool2x2(Tape<T>& tape, Var x);
/// Nearest-neighbour resize of [C,H,W] to [C,out_h,out_w].
template <typename T> Var upsample_nearest(Tape<T>& tape, Var x, int out_h, int out_w);

/// y = x w^T + b for x [R,In], w [Out,In], b [Out] (optional).
template <typename T> Var linear(Tape<T>& tape, Var x, Var w, Var b);
/// Concatenates along axis 1; all other axes must agree.
template <typename T> Var concat(Tape<T>& tape, const std::vector<Var>& parts);
/// Mean over every axis after the second: [R,C,...] -> [R,C].
template <typename T> Var mean_trailing(Tape<T>& tape, Var x);
/// Row means over consecutive segments: x [R,D], offsets of size N+1 -> [N,D].
template <typename T> Var segment_mean(Tape<T>& tape, Var x, const std::vector<int>& offsets);
/// Selects rows of a [C,E] table -> [N,E].
template <typename T> Var gather_rows(Tape<T>& tape, Var table, const std::vector<int>& rows);

// Losses. Each returns a rank-0 tensor already divided by `normalizer`.

/// Sigmoid focal loss; targets are 1 (positive), 0 (negative) or -1 (ignored)
/// for every element of logits.
template <typename T>
Var sigmoid_focal_loss(Tape<T>& tape, Var logits, const std::vector<std::int8_t>& targets,
                       T alpha, T gamma, T normalizer);

/// Smooth-L1 between pred and targets, elements weighted by `weights`.
template <typename T>
Var smooth_l1_loss(Tape<T>& tape, Var pred, const std::vector<T>& targets,
                   const std::vector<T>& weights, T beta, T normalizer);

/// Binary cross-entropy on logits with targets in {0,1}.
template <typename T>
Var bce_with_logits(Tape<T>& tape, Var logits, const std::vector<T>& targets, T normalizer);

}  // namespace pointbox::nn
