// Named parameter storage shared by graphs. Ordered map keeps every walk over
// the parameters deterministic.
#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "fd/array.hpp"
#include "fd/rng.hpp"

namespace fd {

class ParamStore {
  public:
    Array& add(const std::string& name, Array init) {
        auto [it, ok] = values_.emplace(name, std::move(init));
        if (!ok) raise("parameter '" + name + "' already exists");
        return it->second;
    }

    Array& at(const std::string& name) {
        auto it = values_.find(name);
        if (it == values_.end()) raise("no parameter named '" + name + "'");
        return it->second;
    }

    const Array& at(const std::string& name) const {
        auto it = values_.find(name);
        if (it == values_.end()) raise("no parameter named '" + name + "'");
        return it->second;
    }

    const Array* ptr(const std::string& name) const { return &at(name); }
    bool has(const std::string& name) const { return values_.count(name) > 0; }

    int64_t total_elems() const {
        int64_t n = 0;
        for (const auto& [k, v] : values_) n += v.numel();
        return n;
    }

    std::map<std::string, Array>& map() { return values_; }
    const std::map<std::string, Array>& map() const { return values_; }

  private:
    std::map<std::string, Array> values_;
};

// He-style normal init for a weight feeding an activation.
inline Array init_weight(std::vector<int> shape, int fan_in, Rng& rng) {
    Array w(std::move(shape));
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = std * rng.normal();
    return w;
}

}  // namespace fd
