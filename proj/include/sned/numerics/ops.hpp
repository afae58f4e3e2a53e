#pragma once

#include <span>

#include "sned/numerics/tape.hpp"

namespace sned::ops {

/// Cross-correlation. x [B,Cin,H,W], w [Cout,Cin,k,k], b [Cout] or invalid.
template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var b, int stride, int padding);

/// Affine map on the trailing axis. x [...,din], w [dout,din], b [dout] or invalid.
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b);

/// x [B,C,...]; normalizes each of `groups` channel groups per sample.
template <typename T>
Var group_norm(Tape<T>& tape, Var x, int groups, Var gamma, Var beta, double eps = 1e-5);

/// q [B,N,d], k/v [B,M,d]; scaled dot-product attention per head, heads concatenated.
template <typename T>
Var multi_head_attention(Tape<T>& tape, Var q, Var k, Var v, int heads);

template <typename T>
Var silu(Tape<T>& tape, Var x);

template <typename T>
Var softmax(Tape<T>& tape, Var x, int axis);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor);

template <typename T>
Var sum(Tape<T>& tape, Var a);

/// Mean of squared differences; returns a scalar.
template <typename T>
Var mse(Tape<T>& tape, Var pred, Var target);

template <typename T>
Var reshape(Tape<T>& tape, Var a, Shape shape);

/// x [B*F,C,H,W] plus bias [B,C] broadcast over frames and pixels.
template <typename T>
Var add_frame_bias(Tape<T>& tape, Var x, Var bias, int frames);

/// [N,C,H,W] -> [N,H*W,C]
template <typename T>
Var to_spatial_tokens(Tape<T>& tape, Var x);

/// [N,H*W,C] -> [N,C,H,W]
template <typename T>
Var from_spatial_tokens(Tape<T>& tape, Var t, int height, int width);

/// [B*F,C,H,W] -> [B*H*W,F,C]
template <typename T>
Var to_temporal_tokens(Tape<T>& tape, Var x, int frames);

/// [B*H*W,F,C] -> [B*F,C,H,W]
template <typename T>
Var from_temporal_tokens(Tape<T>& tape, Var t, int frames, int height, int width);

/// [B,...] -> [B*times,...], each item repeated consecutively.
template <typename T>
Var repeat_batch(Tape<T>& tape, Var x, int times);

/// [N,C,H,W] -> [N,C,2H,2W]
template <typename T>
Var upsample_nearest2x(Tape<T>& tape, Var x);

/// [N,Ca,H,W] ++ [N,Cb,H,W] -> [N,Ca+Cb,H,W]
template <typename T>
Var concat_channels(Tape<T>& tape, Var a, Var b);

/// Gathers rows of table [V,D]; output shape is prefix ++ [D].
template <typename T>
Var embedding(Tape<T>& tape, Var table, std::span<const int> ids, Shape prefix);

}  // namespace sned::ops
