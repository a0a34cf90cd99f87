#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "d2dgs/math.hpp"

namespace d2dgs {

// Row-major H x W x C buffer of doubles.
class Image {
public:
    Image() = default;
    Image(int height, int width, int channels, double fill = 0.0)
        : h_(height), w_(width), c_(channels),
          data_(size_t(height) * width * channels, fill) {}

    int height() const { return h_; }
    int width() const { return w_; }
    int channels() const { return c_; }
    bool empty() const { return data_.empty(); }
    size_t size() const { return data_.size(); }

    double& at(int y, int x, int ch = 0) { return data_[(size_t(y) * w_ + x) * c_ + ch]; }
    double at(int y, int x, int ch = 0) const { return data_[(size_t(y) * w_ + x) * c_ + ch]; }

    Vec3 rgb(int y, int x) const {
        const size_t i = (size_t(y) * w_ + x) * c_;
        return {data_[i], data_[i + 1], data_[i + 2]};
    }
    void set_rgb(int y, int x, const Vec3& v) {
        const size_t i = (size_t(y) * w_ + x) * c_;
        data_[i] = v[0];
        data_[i + 1] = v[1];
        data_[i + 2] = v[2];
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    bool same_shape(const Image& o) const { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }

    void require_same_shape(const Image& o, const char* what) const {
        if (!same_shape(o)) throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }

private:
    int h_ = 0, w_ = 0, c_ = 0;
    std::vector<double> data_;
};

}  // namespace d2dgs
