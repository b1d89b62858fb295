#include "featimg/checkpoint.hpp"

#include <cstring>

#include <torch/torch.h>

#include "featimg/errors.hpp"
#include "featimg/io_util.hpp"

namespace featimg {

namespace {

enum class BlobType : std::uint8_t { F32 = 0, F64 = 1, I64 = 2 };

class Writer {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void i64(std::int64_t v) {
        const auto u = static_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }
    std::span<const std::uint8_t> view() const { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw SchemaError("checkpoint payload ends early");
    }
    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::int64_t i64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return static_cast<std::int64_t>(v);
    }
    std::string str() {
        const auto n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    const std::uint8_t* take(std::size_t n) {
        need(n);
        const auto* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::size_t pos() const { return pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

BlobType blob_type(const torch::Tensor& t) {
    switch (t.scalar_type()) {
    case torch::kFloat32: return BlobType::F32;
    case torch::kFloat64: return BlobType::F64;
    case torch::kInt64: return BlobType::I64;
    default: throw SchemaError("unsupported tensor dtype in checkpoint");
    }
}

torch::Dtype torch_type(BlobType b) {
    switch (b) {
    case BlobType::F32: return torch::kFloat32;
    case BlobType::F64: return torch::kFloat64;
    case BlobType::I64: return torch::kInt64;
    }
    throw SchemaError("unknown tensor dtype tag in checkpoint");
}

} // namespace

const torch::Tensor& Checkpoint::at(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return t.value;
    }
    throw SchemaError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return true;
    }
    return false;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    Writer w;
    w.raw(kCheckpointMagic, 8);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(ckpt.kind));
    w.str(ckpt.config.dump());
    w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, value] : ckpt.tensors) {
        const auto t = value.detach().cpu().contiguous();
        w.str(name);
        w.u8(static_cast<std::uint8_t>(blob_type(t)));
        w.u32(static_cast<std::uint32_t>(t.dim()));
        for (auto d : t.sizes()) w.i64(d);
        w.raw(t.data_ptr(), static_cast<std::size_t>(t.numel()) * t.element_size());
    }
    w.u32(io::crc32(w.view()));
    return w.take();
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 + 4 + 4) {
        throw ChecksumError("checkpoint truncated (" + std::to_string(bytes.size()) + " bytes)");
    }
    const auto body = bytes.first(bytes.size() - 4);
    Reader tail(bytes.last(4));
    const auto stored = tail.u32();
    const auto actual = io::crc32(body);
    if (stored != actual) {
        throw ChecksumError("checkpoint checksum mismatch (stored " + io::hex32(stored) + ", computed " +
                            io::hex32(actual) + ")");
    }
    Reader r(body);
    const auto* magic = r.take(8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw SchemaError("not a featimg checkpoint");
    }
    const auto version = r.u32();
    if (version != kCheckpointVersion) {
        throw VersionError("checkpoint format version " + std::to_string(version) + " (supported: " +
                           std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint ckpt;
    ckpt.kind = static_cast<CheckpointKind>(r.u32());
    ckpt.config = nlohmann::json::parse(r.str());
    const auto n = r.u32();
    ckpt.tensors.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        NamedTensor nt;
        nt.name = r.str();
        const auto type = torch_type(static_cast<BlobType>(r.u8()));
        const auto ndim = r.u32();
        std::vector<std::int64_t> dims(ndim);
        for (auto& d : dims) d = r.i64();
        auto t = torch::empty(dims, torch::TensorOptions().dtype(type));
        const auto nbytes = static_cast<std::size_t>(t.numel()) * t.element_size();
        std::memcpy(t.data_ptr(), r.take(nbytes), nbytes);
        nt.value = std::move(t);
        ckpt.tensors.push_back(std::move(nt));
    }
    if (r.pos() != body.size()) {
        throw SchemaError("trailing bytes in checkpoint");
    }
    return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    io::write_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    const auto bytes = io::read_bytes(path);
    try {
        return parse_checkpoint(bytes);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

std::uint32_t checkpoint_checksum(const std::filesystem::path& path) {
    const auto bytes = io::read_bytes(path);
    if (bytes.size() < 4) throw ChecksumError("checkpoint truncated");
    Reader r{std::span<const std::uint8_t>(bytes).last(4)};
    return r.u32();
}

} // namespace featimg
