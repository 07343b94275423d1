#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tinyseg/tensor.hpp"

namespace tinyseg {

/// One dataset row: image path, mask path, split.
struct ManifestEntry {
    std::filesystem::path image;
    std::filesystem::path mask;
    std::string split;
};

inline bool valid_split(const std::string& split) {
    return split == "train" || split == "val" || split == "test";
}

/// Writes a tab-separated manifest (`image\tmask\tsplit` per line).
inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error(path.string() + ": cannot open for writing");
    }
    for (const ManifestEntry& e : entries) {
        out << e.image.generic_string() << '\t' << e.mask.generic_string() << '\t' << e.split
            << '\n';
    }
    if (!out) {
        throw std::runtime_error(path.string() + ": write failed");
    }
}

/// Parses a manifest. Relative paths are resolved against the manifest's
/// directory; lines starting with `#` and blank lines are skipped. Every
/// referenced file must exist and image paths must be unique.
inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error(path.string() + ": cannot open");
    }
    const std::filesystem::path base = path.has_parent_path() ? path.parent_path() : ".";
    std::vector<ManifestEntry> entries;
    std::set<std::string> seen_images;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::istringstream fields(line);
        std::string image;
        std::string mask;
        std::string split;
        if (!std::getline(fields, image, '\t') || !std::getline(fields, mask, '\t') ||
            !std::getline(fields, split, '\t')) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": expected <image>\\t<mask>\\t<split>");
        }
        if (!valid_split(split)) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": invalid split '" + split + "'");
        }
        ManifestEntry entry;
        const std::filesystem::path image_path(image);
        const std::filesystem::path mask_path(mask);
        entry.image = image_path.is_absolute() ? image_path : base / image_path;
        entry.mask = mask_path.is_absolute() ? mask_path : base / mask_path;
        entry.split = split;
        if (!std::filesystem::exists(entry.image)) {
            throw std::runtime_error("manifest references missing file: " + entry.image.string());
        }
        if (!std::filesystem::exists(entry.mask)) {
            throw std::runtime_error("manifest references missing file: " + entry.mask.string());
        }
        if (!seen_images.insert(entry.image.string()).second) {
            throw std::runtime_error(path.string() + ": duplicate image path " +
                                     entry.image.string());
        }
        entries.push_back(std::move(entry));
    }
    return entries;
}

}  // namespace tinyseg
