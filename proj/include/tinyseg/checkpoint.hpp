#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tinyseg/architectures.hpp"

namespace tinyseg {

inline constexpr char kCheckpointMagic[4] = {'S', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Canonical key=value text form of a spec: fixed key order, one pair per
/// line. `stride` is 0 for non-FCN families.
inline std::string spec_to_text(const ArchitectureSpec& spec) {
    std::ostringstream out;
    out << "family=" << family_name(spec.family) << '\n'
        << "stride=" << spec.stride << '\n'
        << "depth=" << spec.depth << '\n'
        << "base_filters=" << spec.base_filters << '\n'
        << "in_channels=" << spec.in_channels << '\n'
        << "num_classes=" << spec.num_classes << '\n'
        << "input_size=" << spec.input_size << '\n';
    return out.str();
}

inline ArchitectureSpec spec_from_text(const std::string& text) {
    ArchitectureSpec spec;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const std::size_t eq = line.find('=');
        require(eq != std::string::npos, "spec text: malformed line '" + line + "'");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "family") {
            spec.family = family_from_name(value);
        } else if (key == "stride") {
            spec.stride = std::stoi(value);
        } else if (key == "depth") {
            spec.depth = std::stoi(value);
        } else if (key == "base_filters") {
            spec.base_filters = std::stoi(value);
        } else if (key == "in_channels") {
            spec.in_channels = std::stoi(value);
        } else if (key == "num_classes") {
            spec.num_classes = std::stoi(value);
        } else if (key == "input_size") {
            spec.input_size = std::stoi(value);
        } else {
            throw std::invalid_argument("spec text: unknown key '" + key + "'");
        }
    }
    return spec;
}

namespace detail {

inline void put_u16(std::ostream& out, std::uint16_t v) {
    const char bytes[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    out.write(bytes, 2);
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
    char bytes[4];
    for (int i = 0; i < 4; ++i) {
        bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    }
    out.write(bytes, 4);
}

inline void put_f64_array(std::ostream& out, std::span<const double> values) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(double)));
    } else {
        for (double d : values) {
            const auto u = std::bit_cast<std::uint64_t>(d);
            char bytes[8];
            for (int i = 0; i < 8; ++i) {
                bytes[i] = static_cast<char>((u >> (8 * i)) & 0xff);
            }
            out.write(bytes, 8);
        }
    }
}

[[noreturn]] inline void format_fail(const std::filesystem::path& path, const std::string& what) {
    throw std::runtime_error(path.string() + ": " + what);
}

inline void get_bytes(std::istream& in, char* dst, std::streamsize count,
                      const std::filesystem::path& path) {
    in.read(dst, count);
    if (in.gcount() != count) {
        format_fail(path, "truncated checkpoint");
    }
}

inline std::uint16_t get_u16(std::istream& in, const std::filesystem::path& path) {
    unsigned char bytes[2];
    get_bytes(in, reinterpret_cast<char*>(bytes), 2, path);
    return static_cast<std::uint16_t>(bytes[0] | (bytes[1] << 8));
}

inline std::uint32_t get_u32(std::istream& in, const std::filesystem::path& path) {
    unsigned char bytes[4];
    get_bytes(in, reinterpret_cast<char*>(bytes), 4, path);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
        v = (v << 8) | bytes[i];
    }
    return v;
}

inline std::vector<double> get_f64_array(std::istream& in, std::size_t count,
                                         const std::filesystem::path& path) {
    std::vector<double> values(count);
    if constexpr (std::endian::native == std::endian::little) {
        get_bytes(in, reinterpret_cast<char*>(values.data()),
                  static_cast<std::streamsize>(count * sizeof(double)), path);
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            unsigned char bytes[8];
            get_bytes(in, reinterpret_cast<char*>(bytes), 8, path);
            std::uint64_t u = 0;
            for (int b = 7; b >= 0; --b) {
                u = (u << 8) | bytes[b];
            }
            values[i] = std::bit_cast<double>(u);
        }
    }
    return values;
}

}  // namespace detail

/// Binary checkpoint: magic "SGCK", u32 format version, the architecture
/// description as a length-prefixed key=value text block, u32 parameter
/// count, then per parameter a u16-length-prefixed name, four u32 shape
/// dims and the raw little-endian 64-bit floats. Parameters round-trip
/// bit-exactly.
inline void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            detail::format_fail(tmp, "cannot open for writing");
        }
        out.write(kCheckpointMagic, 4);
        detail::put_u32(out, kCheckpointVersion);
        const std::string spec_text = spec_to_text(model.spec);
        detail::put_u32(out, static_cast<std::uint32_t>(spec_text.size()));
        out.write(spec_text.data(), static_cast<std::streamsize>(spec_text.size()));
        detail::put_u32(out, static_cast<std::uint32_t>(model.params.size()));
        for (const ParamEntry& entry : model.params.entries()) {
            detail::put_u16(out, static_cast<std::uint16_t>(entry.name.size()));
            out.write(entry.name.data(), static_cast<std::streamsize>(entry.name.size()));
            const Shape s = entry.value.shape();
            detail::put_u32(out, static_cast<std::uint32_t>(s.n));
            detail::put_u32(out, static_cast<std::uint32_t>(s.c));
            detail::put_u32(out, static_cast<std::uint32_t>(s.h));
            detail::put_u32(out, static_cast<std::uint32_t>(s.w));
            detail::put_f64_array(out, entry.value.data());
        }
        if (!out) {
            detail::format_fail(tmp, "write failed");
        }
    }
    std::filesystem::rename(tmp, path);
}

/// Rebuilds the model from the stored spec and restores every parameter.
/// Fails on bad magic/version, truncation, unknown parameters or shape
/// mismatches against the rebuilt structure.
inline Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        detail::format_fail(path, "cannot open");
    }
    char magic[4];
    detail::get_bytes(in, magic, 4, path);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        detail::format_fail(path, "bad magic; not a checkpoint file");
    }
    const std::uint32_t version = detail::get_u32(in, path);
    if (version != kCheckpointVersion) {
        detail::format_fail(path, "unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t spec_len = detail::get_u32(in, path);
    std::string spec_text(spec_len, '\0');
    detail::get_bytes(in, spec_text.data(), spec_len, path);
    const ArchitectureSpec spec = spec_from_text(spec_text);
    validate_spec(spec);

    Model model = build_model(spec, std::uint64_t{0});
    const std::uint32_t count = detail::get_u32(in, path);
    if (count != model.params.size()) {
        detail::format_fail(path, "checkpoint has " + std::to_string(count) +
                                      " parameters, spec expects " +
                                      std::to_string(model.params.size()));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = detail::get_u16(in, path);
        std::string name(name_len, '\0');
        detail::get_bytes(in, name.data(), name_len, path);
        Shape shape;
        shape.n = detail::get_u32(in, path);
        shape.c = detail::get_u32(in, path);
        shape.h = detail::get_u32(in, path);
        shape.w = detail::get_u32(in, path);
        if (!model.params.contains(name)) {
            detail::format_fail(path, "unknown parameter '" + name + "' for spec");
        }
        if (!(model.params.get(name).shape() == shape)) {
            detail::format_fail(path, "parameter '" + name + "' has shape " + shape.str() +
                                          ", spec expects " +
                                          model.params.get(name).shape().str());
        }
        std::vector<double> values =
            detail::get_f64_array(in, static_cast<std::size_t>(shape.numel()), path);
        model.params.set(name, Tensor(shape, std::move(values)));
    }
    return model;
}

}  // namespace tinyseg
