#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "kvedit/error.hpp"

namespace kvedit {

// Dense row-major double array; the only tensor type in the project.
struct Array {
    std::vector<double> data;
    std::vector<int64_t> shape;

    Array() = default;

    static Array zeros(std::initializer_list<int64_t> dims) {
        Array a;
        a.shape.assign(dims);
        int64_t n = 1;
        for (int64_t d : a.shape) n *= d;
        a.data.assign(static_cast<size_t>(n), 0.0);
        return a;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
    int64_t cols() const { return shape.size() < 2 ? (shape.empty() ? 0 : 1) : shape[1]; }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
    double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

    bool same_shape(const Array& other) const { return shape == other.shape; }

    void zero() { std::fill(data.begin(), data.end(), 0.0); }
};

inline void require_shape(const Array& a, int64_t r, int64_t c, const char* what) {
    if (a.rows() != r || a.cols() != c) {
        fail(ErrorKind::Shape, std::string(what) + ": expected " + std::to_string(r) + "x" +
                                   std::to_string(c) + ", got " + std::to_string(a.rows()) + "x" +
                                   std::to_string(a.cols()));
    }
}

} // namespace kvedit
