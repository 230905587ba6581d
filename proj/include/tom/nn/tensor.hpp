#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace tom::nn {

// Buffers start on Eigen's vector alignment so kernels take the same code path (and the same
// summation order) on every run.
using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

// Dense row-major tensor of doubles, up to 4-D (N, C, H, W).
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::vector<int> shape, std::vector<double> data);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::size_t numel() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    Storage& values() { return data_; }
    const Storage& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int n, int c, int h, int w) {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    double at(int n, int c, int h, int w) const {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    void fill(double v);
    // Same data viewed under another shape with equal element count.
    Tensor reshaped(std::vector<int> shape) const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

  private:
    std::vector<int> shape_;
    Storage data_;
};

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

// Throws NumericError naming `where` if any entry is NaN or infinite.
void check_finite(const Tensor& t, std::string_view where);

Tensor randn(std::vector<int> shape, double stddev, std::mt19937_64& rng);

// Trainable tensor with its accumulated gradient.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string name, Tensor value);
    void zero_grad();
};

}  // namespace tom::nn
