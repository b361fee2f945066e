#include "fd/array.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "fd/kernels.hpp"

namespace fd {

bool Array::all_finite() const { return kernels::all_finite(data_.data(), numel()); }

bool Array::bit_equal(const Array& o) const {
    if (shape_ != o.shape_) return false;
    return std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(double)) == 0;
}

Array transposed(const Array& a) {
    if (a.rank() != 2) raise("transposed: rank-2 expected, got " + a.shape_str());
    const int r = a.dim(0), c = a.dim(1);
    Array out({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<int64_t>(j) * r + i] = a[static_cast<int64_t>(i) * c + j];
    return out;
}

Array slice_axis(const Array& a, int axis, int begin, int end) {
    if (axis < 0 || axis >= a.rank()) raise("slice_axis: axis out of range");
    if (begin < 0 || end <= begin || end > a.dim(axis)) raise("slice_axis: bad range");
    std::vector<int> shape = a.shape();
    shape[static_cast<size_t>(axis)] = end - begin;
    Array out(shape);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    const int64_t ablk = static_cast<int64_t>(a.dim(axis)) * inner;
    const int64_t oblk = static_cast<int64_t>(end - begin) * inner;
    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * oblk, a.data() + o * ablk + begin * inner,
                    sizeof(double) * static_cast<size_t>(oblk));
    return out;
}

namespace {

constexpr char kMagic[4] = {'F', 'D', 'A', 'R'};

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) raise("array read: truncated stream");
    return v;
}

}  // namespace

void write_array(std::ostream& os, const Array& a) {
    os.write(kMagic, 4);
    put<uint32_t>(os, static_cast<uint32_t>(a.rank()));
    for (int d : a.shape()) put<uint64_t>(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(a.data()),
             static_cast<std::streamsize>(a.numel() * sizeof(double)));
}

Array read_array(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) raise("array read: bad magic");
    const uint32_t rank = get<uint32_t>(is);
    if (rank > 8) raise("array read: implausible rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) {
        const uint64_t v = get<uint64_t>(is);
        if (v == 0 || v > (uint64_t{1} << 32)) raise("array read: bad dimension");
        d = static_cast<int>(v);
    }
    Array a(shape);
    is.read(reinterpret_cast<char*>(a.data()),
            static_cast<std::streamsize>(a.numel() * sizeof(double)));
    if (!is) raise("array read: truncated payload");
    return a;
}

void save_array(const std::string& path, const Array& a) {
    std::ofstream os(path, std::ios::binary);
    if (!os) raise("cannot open '" + path + "' for writing");
    write_array(os, a);
}

Array load_array(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) raise("cannot open '" + path + "'");
    return read_array(is);
}

}  // namespace fd
