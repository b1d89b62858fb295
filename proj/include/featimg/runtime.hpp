#pragma once

#include <cstdint>

#include <torch/types.h>

namespace featimg {

/// Deterministic mode pins intra-op threads to 1 and asks libtorch for
/// deterministic kernels; identical inputs then give bit-identical results.
void configure_runtime(bool deterministic, int threads = 0);

/// A CPU generator independent of libtorch's global RNG.
at::Generator make_generator(std::uint64_t seed);

/// Hash over the raw bytes of every tensor, in order. Used for freeze checks
/// and reproducibility assertions.
std::uint32_t tensor_hash(const std::vector<torch::Tensor>& tensors);

} // namespace featimg
