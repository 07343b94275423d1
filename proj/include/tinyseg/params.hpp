#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "tinyseg/tensor.hpp"

namespace tinyseg {

/// One named model tensor. Buffers (e.g. batch-norm running statistics)
/// are entries with trainable = false; they are persisted in checkpoints
/// but never touched by the optimizer.
struct ParamEntry {
    std::string name;
    Tensor value;
    bool trainable = true;
};

/// Ordered name -> tensor map. Insertion order is the canonical parameter
/// order used by checkpoints.
class ParamStore {
public:
    void add(const std::string& name, Tensor value, bool trainable = true) {
        require(index_.find(name) == index_.end(), "duplicate parameter name: " + name);
        index_.emplace(name, entries_.size());
        entries_.push_back(ParamEntry{name, std::move(value), trainable});
    }

    bool contains(const std::string& name) const { return index_.find(name) != index_.end(); }

    const ParamEntry& entry(const std::string& name) const {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown parameter: " + name);
        return entries_[it->second];
    }

    const Tensor& get(const std::string& name) const { return entry(name).value; }

    void set(const std::string& name, Tensor value) {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown parameter: " + name);
        ParamEntry& e = entries_[it->second];
        require(e.value.shape() == value.shape(),
                "parameter " + name + ": shape " + value.shape().str() +
                    " does not match stored " + e.value.shape().str());
        e.value = std::move(value);
    }

    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::int64_t total_elements() const {
        std::int64_t total = 0;
        for (const ParamEntry& e : entries_) {
            total += e.value.numel();
        }
        return total;
    }

private:
    std::vector<ParamEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace tinyseg
