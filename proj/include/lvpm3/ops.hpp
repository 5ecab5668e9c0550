#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lvpm3/rng.hpp"
#include "lvpm3/tensor.hpp"

namespace lvpm3::ad {

using TokenId = std::int32_t;

inline constexpr double kLayerNormEps = 1e-5;

/// Batched matrix product a[..., m, k] · b[..., k, n]. Batch dimensions must be equal,
/// or one operand may be a plain matrix shared across the other's batch.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// a[..., m, k] · b[..., n, k]ᵀ without materializing the transpose.
template <typename T>
BasicTensor<T> matmul_bt(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Elementwise sum. `b` either matches `a` or matches a trailing suffix of a's shape
/// (broadcast over leading dimensions only).
template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

/// Max-subtracted softmax along `axis`.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis);

/// Normalizes each row of the last dimension (population variance), then applies gain/bias.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, double eps = kLayerNormEps);

/// Row gather table[ids] -> [ids.size(), d]; backward scatter-adds into the table.
template <typename T>
BasicTensor<T> embedding_lookup(const BasicTensor<T>& table, std::span<const TokenId> ids);

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis);

/// Swaps the last two axes.
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& order);

/// Columns [begin, begin + length) of the last axis.
template <typename T>
BasicTensor<T> slice_last(const BasicTensor<T>& x, std::size_t begin, std::size_t length);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x);

/// x·W + b where W and b may themselves be graph activations (e.g. generated weights);
/// gradients reach whatever produced them.
template <typename T>
BasicTensor<T> linear_with_external_params(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                                           const BasicTensor<T>& bias);

/// x[B, M, d] + b[B, d], one bias row per batch entry.
template <typename T>
BasicTensor<T> add_batch_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias);

/// Mean over non-pad rows of the cross-entropy against the smoothed target
/// q = (1 - eps) * onehot + eps / V.
template <typename T>
BasicTensor<T> cross_entropy_label_smoothed(const BasicTensor<T>& logits,
                                            std::span<const TokenId> targets, double eps_ls,
                                            TokenId pad_id);

/// Inverted dropout: kept units are scaled by 1 / (1 - p).
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, Rng& rng);

/// scores[B, H, Tq, Tk] with disallowed positions replaced by a large negative value.
/// `allowed` is [B, Tq, Tk] and is shared across heads.
template <typename T>
BasicTensor<T> attention_mask(const BasicTensor<T>& scores, std::span<const std::uint8_t> allowed);

} // namespace lvpm3::ad
