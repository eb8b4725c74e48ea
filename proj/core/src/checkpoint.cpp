#include "scm/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace scm {

namespace {

constexpr char kMagic[8] = {'S', 'C', 'M', 'T', 'E', 'N', 'S', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& os, T value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::ifstream& is, const std::string& path) {
    T value;
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!is) throw ParseError(path + ": truncated tensor container");
    return value;
}

}  // namespace

void write_named_tensors(const std::string& path, const NamedTensors& bundle) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ParseError(path + ": cannot open for writing");
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(bundle.metadata.size()));
    os.write(bundle.metadata.data(), static_cast<std::streamsize>(bundle.metadata.size()));
    put<std::uint64_t>(os, bundle.tensors.size());
    for (const auto& [name, tensor] : bundle.tensors) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.rank()));
        for (int d : tensor.shape()) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
        os.write(reinterpret_cast<const char*>(tensor.data().data()),
                 static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
    }
    if (!os) throw ParseError(path + ": write failed");
}

NamedTensors read_named_tensors(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError(path + ": cannot open");
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw ParseError(path + ": not a tensor container (bad magic)");
    }
    const auto version = take<std::uint32_t>(is, path);
    if (version != kVersion) {
        throw ParseError(path + ": unsupported container version " + std::to_string(version));
    }
    NamedTensors bundle;
    const auto meta_len = take<std::uint32_t>(is, path);
    bundle.metadata.resize(meta_len);
    is.read(bundle.metadata.data(), meta_len);
    if (!is) throw ParseError(path + ": truncated metadata");
    const auto count = take<std::uint64_t>(is, path);
    for (std::uint64_t t = 0; t < count; ++t) {
        const auto name_len = take<std::uint32_t>(is, path);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw ParseError(path + ": truncated tensor name");
        const auto rank = take<std::uint32_t>(is, path);
        std::vector<int> shape;
        std::int64_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const auto extent = take<std::uint64_t>(is, path);
            shape.push_back(static_cast<int>(extent));
            numel *= static_cast<std::int64_t>(extent);
        }
        std::vector<double> data(static_cast<std::size_t>(numel));
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!is) throw ParseError(path + ": truncated tensor data for " + name);
        bundle.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return bundle;
}

}  // namespace scm
