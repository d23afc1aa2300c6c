#pragma once

#include <map>
#include <string>
#include <vector>

#include "lsic/autodiff.hpp"
#include "lsic/tensor.hpp"

namespace lsic {

// Versioned binary archive: a config snapshot, named tensors (parameters,
// Adam moments, power-iteration vectors) and a string map for counters.
struct Checkpoint {
    std::string config_text;
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> strings;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    // Stores p.value plus Adam moments (when allocated) under p.name.
    void put_params(const std::vector<ad::Parameter*>& params);
    // Restores values and moments; throws on missing names or shape mismatch.
    void restore_params(const std::vector<ad::Parameter*>& params) const;

    void put_tensor(const std::string& name, const Tensor& t) { tensors[name] = t; }
    const Tensor& tensor(const std::string& name) const;
    bool has_tensor(const std::string& name) const { return tensors.count(name) > 0; }

    void put_string(const std::string& key, const std::string& v) { strings[key] = v; }
    std::string string_or(const std::string& key, const std::string& fallback) const;
};

} // namespace lsic
