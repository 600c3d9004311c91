#include "tenscirc/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tenscirc {

double DenseTensor::frobenius_norm() const {
    double s = 0.0;
    for (double x : data_) s += x * x;
    return std::sqrt(s);
}

double DenseTensor::max_abs_diff(const DenseTensor& other) const {
    if (dims_ != other.dims_) {
        throw std::invalid_argument("max_abs_diff: dimension mismatch");
    }
    double m = 0.0;
    for (std::size_t i = 0; i < data_.size(); ++i) {
        m = std::max(m, std::fabs(data_[i] - other.data_[i]));
    }
    return m;
}

namespace {

void write_f64_le(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("DenseTensor::load: truncated payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

}  // namespace

void DenseTensor::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("DenseTensor::save: cannot open " + path);
    os << "dims: ";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (i > 0) os << ',';
        os << dims_[i];
    }
    os << '\n';
    for (double v : data_) write_f64_le(os, v);
}

DenseTensor DenseTensor::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("DenseTensor::load: cannot open " + path);
    std::string header;
    std::getline(is, header);
    if (header.rfind("dims: ", 0) != 0) {
        throw std::runtime_error("DenseTensor::load: missing dims header");
    }
    std::vector<int> dims;
    std::istringstream hs(header.substr(6));
    std::string item;
    while (std::getline(hs, item, ',')) dims.push_back(std::stoi(item));
    DenseTensor t(dims);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = read_f64_le(is);
    return t;
}

}  // namespace tenscirc
