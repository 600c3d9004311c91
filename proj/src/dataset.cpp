#include "tenscirc/dataset.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "tenscirc/rng.hpp"

namespace tenscirc {

Batch Dataset::batch_of(const std::vector<int>& rows) const {
    Batch b;
    b.var_count = var_count;
    b.size = static_cast<int>(rows.size());
    b.values.reserve(rows.size() * static_cast<std::size_t>(var_count));
    for (int r : rows) {
        for (int j = 0; j < var_count; ++j) b.values.push_back(at(r, j));
    }
    b.marginalized.assign(b.values.size(), 0);
    return b;
}

Batch Dataset::full_batch() const {
    Batch b;
    b.var_count = var_count;
    b.size = size();
    b.values = values;
    b.marginalized.assign(values.size(), 0);
    return b;
}

Dataset Dataset::slice(int begin, int end) const {
    Dataset out = *this;
    out.values.assign(values.begin() + static_cast<std::ptrdiff_t>(begin) * var_count,
                      values.begin() + static_cast<std::ptrdiff_t>(end) * var_count);
    return out;
}

namespace {

std::uint32_t read_u32_be(std::istream& is, const std::string& what, std::size_t offset) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) {
        throw std::runtime_error("idx: truncated " + what + " at byte offset " +
                                 std::to_string(offset));
    }
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

void write_u32_be(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>(v & 0xFF)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path, int limit,
                 std::vector<int>* labels_out) {
    std::ifstream is(images_path, std::ios::binary);
    if (!is) throw std::runtime_error("idx: cannot open " + images_path);
    std::uint32_t magic = read_u32_be(is, "magic", 0);
    if (magic != 0x00000803) {
        std::ostringstream os;
        os << "idx: bad image magic 0x" << std::hex << magic << " at offset 0 (expected 0x803)";
        throw std::runtime_error(os.str());
    }
    std::uint32_t n = read_u32_be(is, "count", 4);
    std::uint32_t rows = read_u32_be(is, "rows", 8);
    std::uint32_t cols = read_u32_be(is, "cols", 12);
    std::uint32_t take = limit > 0 && static_cast<std::uint32_t>(limit) < n
                             ? static_cast<std::uint32_t>(limit)
                             : n;
    Dataset data;
    data.var_count = static_cast<int>(rows * cols);
    data.family = InputFamily::Categorical;
    data.domains.assign(static_cast<std::size_t>(data.var_count), 256);
    data.values.resize(static_cast<std::size_t>(take) * data.var_count);
    std::vector<unsigned char> buf(static_cast<std::size_t>(data.var_count));
    for (std::uint32_t i = 0; i < take; ++i) {
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!is) {
            throw std::runtime_error(
                "idx: truncated image payload, expected " +
                std::to_string(16 + static_cast<std::size_t>(n) * rows * cols) +
                " bytes, failed at image " + std::to_string(i));
        }
        for (std::size_t j = 0; j < buf.size(); ++j) {
            data.values[static_cast<std::size_t>(i) * data.var_count + j] =
                static_cast<double>(buf[j]);
        }
    }
    if (!labels_path.empty()) {
        std::ifstream ls(labels_path, std::ios::binary);
        if (!ls) throw std::runtime_error("idx: cannot open " + labels_path);
        std::uint32_t lmagic = read_u32_be(ls, "label magic", 0);
        if (lmagic != 0x00000801) {
            std::ostringstream os;
            os << "idx: bad label magic 0x" << std::hex << lmagic << " (expected 0x801)";
            throw std::runtime_error(os.str());
        }
        std::uint32_t ln = read_u32_be(ls, "label count", 4);
        if (ln != n) throw std::runtime_error("idx: label count does not match image count");
        if (labels_out) {
            labels_out->resize(take);
            for (std::uint32_t i = 0; i < take; ++i) {
                char c;
                ls.read(&c, 1);
                if (!ls) throw std::runtime_error("idx: truncated labels");
                (*labels_out)[i] = static_cast<unsigned char>(c);
            }
        }
    }
    return data;
}

void write_idx(const Dataset& data, int height, int width, const std::string& path) {
    if (height * width != data.var_count) {
        throw std::invalid_argument("write_idx: height*width must equal the variable count");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("idx: cannot open " + path + " for writing");
    write_u32_be(os, 0x00000803);
    write_u32_be(os, static_cast<std::uint32_t>(data.size()));
    write_u32_be(os, static_cast<std::uint32_t>(height));
    write_u32_be(os, static_cast<std::uint32_t>(width));
    for (double v : data.values) {
        if (v < 0.0 || v > 255.0) throw std::invalid_argument("write_idx: value out of byte range");
        char c = static_cast<char>(static_cast<unsigned char>(v));
        os.write(&c, 1);
    }
}

Dataset load_csv(const std::string& path, int expected_columns, bool header) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("csv: cannot open " + path);
    Dataset data;
    data.family = InputFamily::Gaussian;
    std::string line;
    int row = 0;
    if (header && !std::getline(is, line)) {
        throw std::runtime_error("csv: empty file " + path);
    }
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        int col = 0;
        while (std::getline(ls, cell, ',')) {
            try {
                std::size_t used = 0;
                double v = std::stod(cell, &used);
                while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) {
                    ++used;
                }
                if (used != cell.size()) throw std::invalid_argument("trailing characters");
                data.values.push_back(v);
            } catch (const std::exception&) {
                throw std::runtime_error("csv: non-numeric cell at row " + std::to_string(row + 1) +
                                         ", column " + std::to_string(col + 1) + ": '" + cell +
                                         "'");
            }
            ++col;
        }
        if (data.var_count == 0) {
            data.var_count = col;
            if (expected_columns > 0 && col != expected_columns) {
                throw std::runtime_error("csv: expected " + std::to_string(expected_columns) +
                                         " columns, found " + std::to_string(col));
            }
        } else if (col != data.var_count) {
            throw std::runtime_error("csv: ragged row " + std::to_string(row + 1));
        }
        ++row;
    }
    return data;
}

void write_csv(const Dataset& data, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("csv: cannot open " + path + " for writing");
    os.precision(17);
    for (int i = 0; i < data.size(); ++i) {
        for (int j = 0; j < data.var_count; ++j) {
            if (j > 0) os << ',';
            os << data.at(i, j);
        }
        os << '\n';
    }
}

SynthResult synth(const SynthSpec& spec, int n, std::uint64_t seed) {
    if (spec.components < 1 || spec.categories < 2 || n < 1) {
        throw std::invalid_argument("synth: bad generator spec");
    }
    const int d = spec.height * spec.width;
    const int cats = spec.categories;
    Rng rng(seed);

    SynthResult out;
    out.mixture_weights.assign(static_cast<std::size_t>(spec.components), 1.0 / spec.components);
    out.component_pmfs.resize(static_cast<std::size_t>(spec.components));
    for (int m = 0; m < spec.components; ++m) {
        auto& pmf = out.component_pmfs[static_cast<std::size_t>(m)];
        pmf.resize(static_cast<std::size_t>(d) * cats);
        for (int j = 0; j < d; ++j) {
            int peak = static_cast<int>(rng.below(static_cast<std::uint64_t>(cats)));
            double z = 0.0;
            for (int c = 0; c < cats; ++c) {
                double v = std::exp(-std::fabs(c - peak) / (spec.concentration * cats));
                pmf[static_cast<std::size_t>(j) * cats + c] = v;
                z += v;
            }
            for (int c = 0; c < cats; ++c) pmf[static_cast<std::size_t>(j) * cats + c] /= z;
        }
    }

    out.data.var_count = d;
    out.data.family = InputFamily::Categorical;
    out.data.domains.assign(static_cast<std::size_t>(d), cats);
    out.data.values.resize(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i) {
        int m = static_cast<int>(
            rng.categorical(out.mixture_weights.data(), out.mixture_weights.size()));
        const auto& pmf = out.component_pmfs[static_cast<std::size_t>(m)];
        for (int j = 0; j < d; ++j) {
            out.data.values[static_cast<std::size_t>(i) * d + j] = static_cast<double>(
                rng.categorical(pmf.data() + static_cast<std::ptrdiff_t>(j) * cats,
                                static_cast<std::size_t>(cats)));
        }
    }

    // H(X|Z) = sum_m pi_m sum_j H(p_mj); H(X) lies in [H(X|Z), H(X|Z)+H(Z)].
    double cond = 0.0;
    for (int m = 0; m < spec.components; ++m) {
        const auto& pmf = out.component_pmfs[static_cast<std::size_t>(m)];
        double h = 0.0;
        for (double p : pmf) {
            if (p > 0.0) h -= p * std::log(p);
        }
        cond += out.mixture_weights[static_cast<std::size_t>(m)] * h;
    }
    double hz = 0.0;
    for (double p : out.mixture_weights) {
        if (p > 0.0) hz -= p * std::log(p);
    }
    out.entropy_lower_nats = cond;
    out.entropy_upper_nats = cond + hz;
    return out;
}

double synth_exact_entropy_nats(const SynthResult& gen, std::size_t max_states) {
    const int d = gen.data.var_count;
    const int cats = gen.data.domains.front();
    std::size_t states = 1;
    for (int j = 0; j < d; ++j) {
        states *= static_cast<std::size_t>(cats);
        if (states > max_states) {
            throw std::invalid_argument("synth_exact_entropy_nats: joint domain too large");
        }
    }
    double h = 0.0;
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    for (std::size_t flat = 0; flat < states; ++flat) {
        double p = 0.0;
        for (std::size_t m = 0; m < gen.mixture_weights.size(); ++m) {
            double pm = gen.mixture_weights[m];
            const auto& pmf = gen.component_pmfs[m];
            for (int j = 0; j < d; ++j) {
                pm *= pmf[static_cast<std::size_t>(j) * cats + idx[static_cast<std::size_t>(j)]];
            }
            p += pm;
        }
        if (p > 0.0) h -= p * std::log(p);
        for (int j = d - 1; j >= 0; --j) {
            if (++idx[static_cast<std::size_t>(j)] < cats) break;
            idx[static_cast<std::size_t>(j)] = 0;
        }
    }
    return h;
}

}  // namespace tenscirc
