#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace tenscirc {

/// Sorted set of 0-based variable indices. Scopes are the currency of the
/// whole library: every region, layer and structural check speaks in them.
class Scope {
public:
    Scope() = default;

    Scope(std::initializer_list<int> vars) : vars_(vars) {
        canonicalize();
    }

    explicit Scope(std::vector<int> vars) : vars_(std::move(vars)) {
        canonicalize();
    }

    static Scope singleton(int var) {
        Scope s;
        s.vars_.push_back(var);
        return s;
    }

    static Scope full(int d) {
        Scope s;
        s.vars_.resize(static_cast<std::size_t>(d));
        for (int i = 0; i < d; ++i) {
            s.vars_[static_cast<std::size_t>(i)] = i;
        }
        return s;
    }

    bool empty() const { return vars_.empty(); }
    std::size_t size() const { return vars_.size(); }
    const std::vector<int>& vars() const { return vars_; }
    int operator[](std::size_t i) const { return vars_[i]; }

    bool contains(int var) const {
        return std::binary_search(vars_.begin(), vars_.end(), var);
    }

    bool disjoint_with(const Scope& other) const {
        std::size_t i = 0, j = 0;
        while (i < vars_.size() && j < other.vars_.size()) {
            if (vars_[i] == other.vars_[j]) return false;
            if (vars_[i] < other.vars_[j]) ++i; else ++j;
        }
        return true;
    }

    Scope united_with(const Scope& other) const {
        Scope out;
        out.vars_.reserve(vars_.size() + other.vars_.size());
        std::set_union(vars_.begin(), vars_.end(), other.vars_.begin(),
                       other.vars_.end(), std::back_inserter(out.vars_));
        return out;
    }

    bool operator==(const Scope& other) const { return vars_ == other.vars_; }
    bool operator!=(const Scope& other) const { return vars_ != other.vars_; }
    bool operator<(const Scope& other) const { return vars_ < other.vars_; }

    std::string to_string() const {
        std::string out;
        for (std::size_t i = 0; i < vars_.size(); ++i) {
            if (i > 0) out += ',';
            out += std::to_string(vars_[i]);
        }
        return out;
    }

private:
    void canonicalize() {
        std::sort(vars_.begin(), vars_.end());
        vars_.erase(std::unique(vars_.begin(), vars_.end()), vars_.end());
        if (!vars_.empty() && vars_.front() < 0) {
            throw std::invalid_argument("Scope: negative variable index");
        }
    }

    std::vector<int> vars_;
};

}  // namespace tenscirc
