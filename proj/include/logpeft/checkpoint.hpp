#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "logpeft/config.hpp"
#include "logpeft/errors.hpp"
#include "logpeft/peft.hpp"

namespace logpeft {

namespace detail {

inline constexpr char kCheckpointMagic[4] = {'L', 'P', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format stores raw little-endian values");

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw CorruptCheckpoint("checkpoint truncated");
    return v;
}

}  // namespace detail

/// On-disk layout, all integers and doubles little-endian:
///   "LPCK" | u32 version | u64 config_len | config text |
///   u64 vocab_keys | u32 n_params |
///   per param, lexicographic by name:
///     u32 name_len | name | u8 frozen | u32 ndims | u64 dim... | f64 data...
inline void save_checkpoint(const ModelBundle& bundle, const RunConfig& config,
                            const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint file '" + path + "'");

    auto named = bundle.named_parameters();
    std::sort(named.begin(), named.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    os.write(detail::kCheckpointMagic, 4);
    detail::write_pod(os, detail::kCheckpointVersion);
    const std::string cfg_text = config.serialize();
    detail::write_pod(os, static_cast<std::uint64_t>(cfg_text.size()));
    os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
    detail::write_pod(os, static_cast<std::uint64_t>(config.vocab_keys));
    detail::write_pod(os, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, tensor] : named) {
        detail::write_pod(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod(os, static_cast<std::uint8_t>(tensor.requires_grad() ? 0 : 1));
        detail::write_pod(os, static_cast<std::uint32_t>(tensor.ndim()));
        for (int d : tensor.shape()) detail::write_pod(os, static_cast<std::uint64_t>(d));
        os.write(reinterpret_cast<const char*>(tensor.data()),
                 static_cast<std::streamsize>(tensor.size() * sizeof(double)));
    }
    if (!os) throw IoError("write failure on checkpoint file '" + path + "'");
}

struct LoadedCheckpoint {
    ModelBundle bundle;
    RunConfig config;
};

/// Rebuilds the bundle described by the embedded config and fills every
/// parameter by name. The loaded model's forward outputs are bit-identical
/// to the saved model's.
inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read checkpoint file '" + path + "'");

    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
        throw CorruptCheckpoint("not a checkpoint file: bad magic");
    const auto version = detail::read_pod<std::uint32_t>(is);
    if (version != detail::kCheckpointVersion)
        throw VersionMismatch("checkpoint version " + std::to_string(version) +
                              " unsupported (expected " +
                              std::to_string(detail::kCheckpointVersion) + ")");

    const auto cfg_len = detail::read_pod<std::uint64_t>(is);
    std::string cfg_text(cfg_len, '\0');
    is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
    if (!is) throw CorruptCheckpoint("checkpoint truncated in config block");
    RunConfig config;
    std::istringstream cfg_stream(cfg_text);
    config.load(cfg_stream);
    const auto vocab_keys = detail::read_pod<std::uint64_t>(is);
    if (static_cast<long>(vocab_keys) != config.vocab_keys)
        throw CorruptCheckpoint("vocab binding disagrees with embedded config");

    struct Block {
        bool frozen;
        std::vector<int> shape;
        std::vector<double> values;
    };
    std::map<std::string, Block> blocks;
    const auto n_params = detail::read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const auto name_len = detail::read_pod<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!is) throw CorruptCheckpoint("checkpoint truncated in parameter name");
        Block b;
        b.frozen = detail::read_pod<std::uint8_t>(is) != 0;
        const auto ndims = detail::read_pod<std::uint32_t>(is);
        if (ndims == 0 || ndims > 4) throw CorruptCheckpoint("implausible tensor rank");
        std::size_t count = 1;
        for (std::uint32_t d = 0; d < ndims; ++d) {
            const auto dim = detail::read_pod<std::uint64_t>(is);
            if (dim == 0 || dim > (1ULL << 32)) throw CorruptCheckpoint("implausible dimension");
            b.shape.push_back(static_cast<int>(dim));
            count *= dim;
        }
        b.values.resize(count);
        is.read(reinterpret_cast<char*>(b.values.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!is) throw CorruptCheckpoint("checkpoint truncated in parameter data");
        blocks.emplace(std::move(name), std::move(b));
    }

    // Rebuild the bundle shape from the config, then overwrite every tensor.
    const TransformerConfig mc = config.transformer_config();
    const PeftMethod method = peft_method_from_string(config.method);
    ModelBundle bundle = method == PeftMethod::Lora
                             ? ModelBundle::make_lora(mc, config.lora_config(), config.seed)
                             : ModelBundle::make_adapter(mc, config.seed);
    auto named = bundle.named_parameters();
    if (named.size() != blocks.size())
        throw CorruptCheckpoint("parameter count mismatch: file has " +
                                std::to_string(blocks.size()) + ", model needs " +
                                std::to_string(named.size()));
    for (auto& [name, tensor] : named) {
        auto it = blocks.find(name);
        if (it == blocks.end()) throw CorruptCheckpoint("missing parameter '" + name + "'");
        if (it->second.shape != tensor.shape())
            throw CorruptCheckpoint("shape mismatch for parameter '" + name + "'");
        tensor.values() = it->second.values;
        tensor.set_requires_grad(!it->second.frozen);
    }
    return {std::move(bundle), std::move(config)};
}

}  // namespace logpeft
