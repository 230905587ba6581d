#include "tom/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "tom/byte_io.hpp"
#include "tom/common.hpp"

namespace tom::nn {

namespace {

constexpr char kMagic[4] = {'T', 'N', 'N', 'C'};

std::uint64_t body_hash(const std::string& bytes, std::size_t n) {
    return fnv1a({reinterpret_cast<const unsigned char*>(bytes.data()), n});
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
    ByteWriter w;
    w.put_bytes(kMagic, 4);
    w.put<std::uint8_t>(kCheckpointVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.metadata.size()));
    w.put_bytes(ckpt.metadata.data(), ckpt.metadata.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        w.put_string16(name);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
        for (int d : t.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
        for (double v : t.values()) w.put_f64(v);
    }
    const std::uint64_t h = body_hash(w.buffer(), w.buffer().size());
    w.put<std::uint64_t>(h);
    return std::move(w.buffer());
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 4 + 1 + 4 + 4 + 8) throw CheckpointError("checkpoint is truncated");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("not a checkpoint file (bad magic)");
    if (static_cast<std::uint8_t>(bytes[4]) != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(static_cast<unsigned char>(bytes[4])));
    if (read_u64_le(bytes, bytes.size() - 8) != body_hash(bytes, bytes.size() - 8))
        throw CheckpointError("checkpoint checksum mismatch (corrupt or truncated)");
    Checkpoint ckpt;
    try {
        ByteReader r(bytes, bytes.size() - 8);
        r.get<std::uint32_t>();
        r.get<std::uint8_t>();
        ckpt.metadata.resize(r.get<std::uint32_t>());
        r.get_bytes(ckpt.metadata.data(), ckpt.metadata.size());
        const auto count = r.get<std::uint32_t>();
        for (std::uint32_t i = 0; i < count; ++i) {
            std::string name = r.get_string16();
            const int rank = r.get<std::uint8_t>();
            std::vector<int> shape(rank);
            for (int& d : shape) d = static_cast<int>(r.get<std::uint32_t>());
            const std::size_t n = shape_numel(shape);
            if (n > r.remaining() / 8) throw ShortRead();
            std::vector<double> data(n);
            for (double& v : data) v = r.get_f64();
            ckpt.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
        }
        if (r.remaining() != 0) throw CheckpointError("trailing bytes in checkpoint");
    } catch (const ShortRead&) {
        throw CheckpointError("checkpoint is truncated");
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + path);
    const std::string bytes = encode_checkpoint(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return decode_checkpoint(ss.str());
}

}  // namespace tom::nn
