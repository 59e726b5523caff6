#include "flow/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <type_traits>

namespace flow {

namespace {

constexpr char kMagic[4] = {'F', 'L', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename V>
void put(std::ostream& os, V v) {
    static_assert(std::is_trivially_copyable_v<V>);
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V take(std::istream& is) {
    V v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!is) throw IoError("checkpoint: truncated file");
    return v;
}

void put_str(std::ostream& os, const std::string& s) {
    put<uint32_t>(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string take_str(std::istream& is) {
    const auto n = take<uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw IoError("checkpoint: truncated string");
    return s;
}

template <typename T>
constexpr int dtype_tag() {
    return std::is_same_v<T, float> ? 0 : 1;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const ParamStoreT<T>& params,
                     const std::string& config_text, uint64_t step,
                     const std::string& rng_state) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open for writing: " + path);
    os.write(kMagic, 4);
    put<uint32_t>(os, kVersion);
    put<uint8_t>(os, static_cast<uint8_t>(dtype_tag<T>()));
    put_str(os, config_text);
    put<uint64_t>(os, step);
    put_str(os, rng_state);
    put<uint32_t>(os, static_cast<uint32_t>(params.items().size()));
    for (const auto& [name, t] : params.items()) {
        put_str(os, name);
        put<uint8_t>(os, static_cast<uint8_t>(dtype_tag<T>()));
        put<uint8_t>(os, static_cast<uint8_t>(t->rank()));
        for (int d : t->shape) put<uint32_t>(os, static_cast<uint32_t>(d));
        os.write(reinterpret_cast<const char*>(t->data.data()),
                 static_cast<std::streamsize>(t->data.size() * sizeof(T)));
    }
    if (!os) throw IoError("checkpoint: write failed: " + path);
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    const auto version = take<uint32_t>(is);
    if (version != kVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version));
    CheckpointMeta meta;
    meta.dtype = take<uint8_t>(is);
    meta.config_text = take_str(is);
    meta.step = take<uint64_t>(is);
    meta.rng_state = take_str(is);
    return meta;
}

template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, ParamStoreT<T>& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    const auto version = take<uint32_t>(is);
    if (version != kVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version));
    CheckpointMeta meta;
    meta.dtype = take<uint8_t>(is);
    meta.config_text = take_str(is);
    meta.step = take<uint64_t>(is);
    meta.rng_state = take_str(is);
    const auto count = take<uint32_t>(is);
    if (count != params.items().size())
        throw ContractError("checkpoint: tensor count mismatch (" + std::to_string(count) +
                            " stored, " + std::to_string(params.items().size()) + " expected)");
    for (const auto& [name, t] : params.items()) {
        const auto stored_name = take_str(is);
        if (stored_name != name)
            throw ContractError("checkpoint: parameter order mismatch at " + stored_name +
                                " (expected " + name + ")");
        const int dtype = take<uint8_t>(is);
        const int rank = take<uint8_t>(is);
        std::vector<int> shape(static_cast<size_t>(rank));
        for (auto& d : shape) d = static_cast<int>(take<uint32_t>(is));
        if (shape != t->shape)
            throw ContractError("checkpoint: shape mismatch for " + name + ": stored " +
                                shape_str(shape) + ", expected " + shape_str(t->shape));
        if (dtype == dtype_tag<T>()) {
            is.read(reinterpret_cast<char*>(t->data.data()),
                    static_cast<std::streamsize>(t->data.size() * sizeof(T)));
        } else if (dtype == 0) {
            std::vector<float> buf(t->data.size());
            is.read(reinterpret_cast<char*>(buf.data()),
                    static_cast<std::streamsize>(buf.size() * sizeof(float)));
            for (size_t i = 0; i < buf.size(); ++i) t->data[i] = static_cast<T>(buf[i]);
        } else {
            std::vector<double> buf(t->data.size());
            is.read(reinterpret_cast<char*>(buf.data()),
                    static_cast<std::streamsize>(buf.size() * sizeof(double)));
            for (size_t i = 0; i < buf.size(); ++i) t->data[i] = static_cast<T>(buf[i]);
        }
        if (!is) throw IoError("checkpoint: truncated payload for " + name);
    }
    return meta;
}

template void save_checkpoint<float>(const std::string&, const ParamStoreT<float>&,
                                     const std::string&, uint64_t, const std::string&);
template void save_checkpoint<double>(const std::string&, const ParamStoreT<double>&,
                                      const std::string&, uint64_t, const std::string&);
template CheckpointMeta load_checkpoint<float>(const std::string&, ParamStoreT<float>&);
template CheckpointMeta load_checkpoint<double>(const std::string&, ParamStoreT<double>&);

}  // namespace flow
