// Dense row-major f64 array: the single value type moved through the engine.
#pragma once

#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace fd {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void raise(const std::string& msg) { throw Error(msg); }

class Array {
  public:
    Array() = default;

    explicit Array(std::vector<int> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

    Array(std::vector<int> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != static_cast<size_t>(checked_numel(shape_)))
            raise("Array: data length " + std::to_string(data_.size()) +
                  " does not match shape " + shape_str());
    }

    static Array scalar(double v) { return Array({1}, {v}); }

    static Array full(std::vector<int> shape, double v) {
        Array a(std::move(shape));
        for (auto& x : a.data_) x = v;
        return a;
    }

    static Array zeros(std::vector<int> shape) { return Array(std::move(shape)); }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at2(int i, int j) { return data_[static_cast<size_t>(i) * dim(1) + j]; }
    double at2(int i, int j) const { return data_[static_cast<size_t>(i) * dim(1) + j]; }
    double& at3(int i, int j, int k) {
        return data_[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
    }
    double at3(int i, int j, int k) const {
        return data_[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
    }

    bool same_shape(const Array& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

    // Reinterprets the buffer under a new shape with the same element count.
    Array reshaped(std::vector<int> shape) const {
        Array out(std::move(shape));
        if (out.numel() != numel())
            raise("reshape: element count mismatch " + shape_str() + " -> " + out.shape_str());
        out.data_ = data_;
        return out;
    }

    bool all_finite() const;
    bool bit_equal(const Array& o) const;

  private:
    static int64_t checked_numel(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            if (d <= 0) raise("Array: non-positive dimension " + std::to_string(d));
            n *= d;
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

// [rows, cols] transpose used by the GEMM callers.
Array transposed(const Array& a);

// Splits `a` along `axis` into [begin, end) - the exact inverse of concat.
Array slice_axis(const Array& a, int axis, int begin, int end);

// Flat binary array file: magic "FDAR", u32 rank, u64 dims, f64 payload (little-endian).
void write_array(std::ostream& os, const Array& a);
Array read_array(std::istream& is);
void save_array(const std::string& path, const Array& a);
Array load_array(const std::string& path);

}  // namespace fd
