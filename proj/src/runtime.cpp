#include "featimg/runtime.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>
#include <zlib.h>

namespace featimg {

void configure_runtime(bool deterministic, int threads) {
    // Denormals from near-dead ReLU units slow CPU kernels by orders of magnitude.
    at::globalContext().setFlushDenormal(true);
    if (deterministic) {
        torch::set_num_threads(1);
        at::globalContext().setDeterministicAlgorithms(true, false);
    } else if (threads > 0) {
        torch::set_num_threads(threads);
    }
}

at::Generator make_generator(std::uint64_t seed) {
    return at::make_generator<at::CPUGeneratorImpl>(seed);
}

std::uint32_t tensor_hash(const std::vector<torch::Tensor>& tensors) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    for (const auto& t : tensors) {
        const auto c = t.detach().cpu().contiguous();
        const auto n = static_cast<uInt>(c.numel() * c.element_size());
        crc = ::crc32(crc, static_cast<const Bytef*>(c.data_ptr()), n);
    }
    return static_cast<std::uint32_t>(crc);
}

} // namespace featimg
