#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace semeq {

using Shape = std::vector<int>;

inline std::int64_t shape_count(const Shape& shape) {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// Dense row-major tensor. `node` is the handle into the active Tape when the
// tensor was produced under tracing, -1 otherwise. Scalar is float in the
// production path and double in gradient-check mode.
template <typename S>
struct Tensor {
    static_assert(std::is_floating_point_v<S>, "Tensor scalar must be float or double");

    Shape shape;
    std::vector<S> data;
    int node = -1;

    Tensor() = default;

    explicit Tensor(Shape sh) : shape(std::move(sh)) {
        validate_shape(shape);
        data.assign(static_cast<std::size_t>(shape_count(shape)), S(0));
    }

    static Tensor zeros(Shape sh) { return Tensor(std::move(sh)); }

    static Tensor full(Shape sh, S value) {
        Tensor t(std::move(sh));
        for (auto& v : t.data) v = value;
        return t;
    }

    static Tensor from(Shape sh, std::vector<S> values) {
        validate_shape(sh);
        if (static_cast<std::int64_t>(values.size()) != shape_count(sh))
            throw std::invalid_argument("Tensor::from: value count does not match shape " +
                                        shape_str(sh));
        Tensor t;
        t.shape = std::move(sh);
        t.data = std::move(values);
        return t;
    }

    static Tensor from(Shape sh, std::initializer_list<S> values) {
        return from(std::move(sh), std::vector<S>(values));
    }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    int dim(int i) const {
        if (i < 0 || i >= rank()) throw std::invalid_argument("Tensor::dim: axis out of range");
        return shape[static_cast<std::size_t>(i)];
    }

    S operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }
    S& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }

    // 2D access, shape [r x c]
    S at2(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
    S& at2(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

    // 4D access, shape [b x c x h x w]
    S at4(int b, int c, int y, int x) const {
        return data[((static_cast<std::size_t>(b) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    S& at4(int b, int c, int y, int x) {
        return data[((static_cast<std::size_t>(b) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    static void validate_shape(const Shape& sh) {
        if (sh.empty()) throw std::invalid_argument("Tensor: rank-0 shapes are not supported");
        for (int e : sh)
            if (e < 1)
                throw std::invalid_argument("Tensor: extents must be >= 1, got " + shape_str(sh));
    }
};

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using MatView = Eigen::Map<RowMat<S>>;

template <typename S>
using ConstMatView = Eigen::Map<const RowMat<S>>;

// Views a contiguous chunk as a rows x cols row-major matrix.
template <typename S>
MatView<S> mat_view(S* p, std::int64_t rows, std::int64_t cols) {
    return MatView<S>(p, rows, cols);
}

template <typename S>
ConstMatView<S> mat_view(const S* p, std::int64_t rows, std::int64_t cols) {
    return ConstMatView<S>(p, rows, cols);
}

template <typename S>
void check_finite(const Tensor<S>& t, const char* op) {
    for (const S v : t.data) {
        if (!std::isfinite(v))
            throw std::runtime_error(std::string("non-finite value produced by op '") + op +
                                     "' with output shape " + shape_str(t.shape));
    }
}

}  // namespace semeq
