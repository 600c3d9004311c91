#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace tenscirc {

/// Row-major dense real tensor; the brute-force oracle and the endpoint of
/// every factorization bridge.
class DenseTensor {
public:
    DenseTensor() = default;

    explicit DenseTensor(std::vector<int> dims) : dims_(std::move(dims)) {
        std::size_t n = 1;
        for (int d : dims_) {
            if (d < 1) throw std::invalid_argument("DenseTensor: dims must be positive");
            n *= static_cast<std::size_t>(d);
        }
        data_.assign(n, 0.0);
    }

    const std::vector<int>& dims() const { return dims_; }
    std::size_t size() const { return data_.size(); }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    double& operator[](std::size_t flat) { return data_[flat]; }
    double operator[](std::size_t flat) const { return data_[flat]; }

    std::size_t flatten(const std::vector<int>& index) const {
        if (index.size() != dims_.size()) {
            throw std::invalid_argument("DenseTensor: index arity mismatch");
        }
        std::size_t flat = 0;
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            if (index[i] < 0 || index[i] >= dims_[i]) {
                throw std::out_of_range("DenseTensor: index out of range");
            }
            flat = flat * static_cast<std::size_t>(dims_[i]) + static_cast<std::size_t>(index[i]);
        }
        return flat;
    }

    std::vector<int> unflatten(std::size_t flat) const {
        std::vector<int> index(dims_.size());
        for (std::size_t i = dims_.size(); i > 0; --i) {
            index[i - 1] = static_cast<int>(flat % static_cast<std::size_t>(dims_[i - 1]));
            flat /= static_cast<std::size_t>(dims_[i - 1]);
        }
        return index;
    }

    double& at(const std::vector<int>& index) { return data_[flatten(index)]; }
    double at(const std::vector<int>& index) const { return data_[flatten(index)]; }

    double sum() const {
        double s = 0.0;
        for (double x : data_) s += x;
        return s;
    }

    double frobenius_norm() const;
    double max_abs_diff(const DenseTensor& other) const;

    /// Flat little-endian float64 binary with a one-line `dims:` header.
    void save(const std::string& path) const;
    static DenseTensor load(const std::string& path);

private:
    std::vector<int> dims_;
    std::vector<double> data_;
};

}  // namespace tenscirc
