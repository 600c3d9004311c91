#include "tenscirc/serialize.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace tenscirc {

namespace {

constexpr int kFormatVersion = 1;
constexpr const char* kBase64Chars =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode_doubles(const std::vector<double>& values) {
    std::vector<unsigned char> bytes(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &values[i], 8);
        for (int b = 0; b < 8; ++b) {
            bytes[i * 8 + static_cast<std::size_t>(b)] =
                static_cast<unsigned char>((bits >> (8 * b)) & 0xFF);
        }
    }
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        std::uint32_t chunk = static_cast<std::uint32_t>(bytes[i]) << 16;
        if (i + 1 < bytes.size()) chunk |= static_cast<std::uint32_t>(bytes[i + 1]) << 8;
        if (i + 2 < bytes.size()) chunk |= bytes[i + 2];
        out.push_back(kBase64Chars[(chunk >> 18) & 63]);
        out.push_back(kBase64Chars[(chunk >> 12) & 63]);
        out.push_back(i + 1 < bytes.size() ? kBase64Chars[(chunk >> 6) & 63] : '=');
        out.push_back(i + 2 < bytes.size() ? kBase64Chars[chunk & 63] : '=');
    }
    return out;
}

std::vector<double> base64_decode_doubles(const std::string& text) {
    auto value_of = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        if (c == '=') return -1;
        throw std::runtime_error("circuit container: invalid base64 character");
    };
    std::vector<unsigned char> bytes;
    bytes.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i + 3 < text.size() || (i < text.size() && text.size() % 4 == 0);
         i += 4) {
        if (i + 3 >= text.size()) break;
        int v0 = value_of(text[i]), v1 = value_of(text[i + 1]);
        int v2 = value_of(text[i + 2]), v3 = value_of(text[i + 3]);
        std::uint32_t chunk = (static_cast<std::uint32_t>(v0) << 18) |
                              (static_cast<std::uint32_t>(v1) << 12);
        bytes.push_back(static_cast<unsigned char>((chunk >> 16) & 0xFF));
        if (v2 >= 0) {
            chunk |= static_cast<std::uint32_t>(v2) << 6;
            bytes.push_back(static_cast<unsigned char>((chunk >> 8) & 0xFF));
        }
        if (v3 >= 0) {
            chunk |= static_cast<std::uint32_t>(v3);
            bytes.push_back(static_cast<unsigned char>(chunk & 0xFF));
        }
    }
    if (bytes.size() % 8 != 0) {
        throw std::runtime_error("circuit container: parameter blob is not float64-aligned");
    }
    std::vector<double> values(bytes.size() / 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) {
            bits |= static_cast<std::uint64_t>(bytes[i * 8 + static_cast<std::size_t>(b)])
                    << (8 * b);
        }
        std::memcpy(&values[i], &bits, 8);
    }
    return values;
}

const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Input: return "input";
        case LayerKind::Hadamard: return "hadamard";
        case LayerKind::Kronecker: return "kronecker";
        case LayerKind::Sum: return "sum";
    }
    return "?";
}

LayerKind kind_from(const std::string& s) {
    if (s == "input") return LayerKind::Input;
    if (s == "hadamard") return LayerKind::Hadamard;
    if (s == "kronecker") return LayerKind::Kronecker;
    if (s == "sum") return LayerKind::Sum;
    throw std::runtime_error("circuit container: unknown layer kind '" + s + "'");
}

const char* structure_name(SumStructure s) {
    switch (s) {
        case SumStructure::Dense: return "dense";
        case SumStructure::Diagonal: return "diagonal";
        case SumStructure::BlockDiagonal: return "block-diagonal";
    }
    return "?";
}

SumStructure structure_from(const std::string& s) {
    if (s == "dense") return SumStructure::Dense;
    if (s == "diagonal") return SumStructure::Diagonal;
    if (s == "block-diagonal") return SumStructure::BlockDiagonal;
    throw std::runtime_error("circuit container: unknown sum structure '" + s + "'");
}

nlohmann::json circuit_to_json_object(const Circuit& c) {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["d"] = c.var_count();
    j["nomenclature"] = c.nomenclature;
    j["output"] = c.output();

    std::set<std::string> families;
    for (const Layer& l : c.layers()) {
        if (l.kind == LayerKind::Input) families.insert(to_string(l.family));
    }
    j["families"] = families;

    nlohmann::json params = nlohmann::json::array();
    for (const ParamBlock& p : c.params()) {
        nlohmann::json jp;
        jp["shape"] = p.shape;
        jp["reparam"] = to_string(p.reparam);
        jp["trainable"] = p.trainable;
        jp["blob"] = base64_encode_doubles(p.data);
        params.push_back(std::move(jp));
    }
    j["params"] = std::move(params);

    nlohmann::json layers = nlohmann::json::array();
    for (const Layer& l : c.layers()) {
        nlohmann::json jl;
        jl["kind"] = kind_name(l.kind);
        jl["scope"] = l.scope.vars();
        jl["width"] = l.width;
        jl["inputs"] = l.inputs;
        if (l.kind == LayerKind::Input) {
            jl["family"] = to_string(l.family);
            jl["categories"] = l.categories;
            jl["binomial_n"] = l.binomial_n;
        }
        if (l.kind == LayerKind::Sum) {
            jl["structure"] = structure_name(l.structure);
            jl["blocks"] = l.diag_blocks;
        }
        if (l.param >= 0) jl["param"] = l.param;
        layers.push_back(std::move(jl));
    }
    j["layers"] = std::move(layers);

    nlohmann::json blocks = nlohmann::json::array();
    for (const BlockRecord& b : c.blocks()) {
        nlohmann::json jb;
        jb["kind"] = to_string(b.kind);
        jb["layers"] = b.layer_ids;
        jb["output"] = b.output_layer;
        blocks.push_back(std::move(jb));
    }
    j["blocks"] = std::move(blocks);
    return j;
}

Circuit circuit_from_json_object(const nlohmann::json& j) {
    if (!j.contains("format_version")) {
        throw std::runtime_error("circuit container: missing format_version");
    }
    int version = j["format_version"].get<int>();
    if (version != kFormatVersion) {
        throw std::runtime_error("circuit container: format_version " + std::to_string(version) +
                                 " is not supported (expected " +
                                 std::to_string(kFormatVersion) + ")");
    }
    Circuit c;
    c.set_var_count(j["d"].get<int>());
    c.nomenclature = j.value("nomenclature", std::string{});
    for (const auto& jp : j["params"]) {
        ParamBlock p;
        p.shape = jp["shape"].get<std::vector<int>>();
        p.reparam = reparam_from_string(jp["reparam"].get<std::string>());
        p.trainable = jp["trainable"].get<bool>();
        p.data = base64_decode_doubles(jp["blob"].get<std::string>());
        std::size_t expected = 1;
        for (int s : p.shape) expected *= static_cast<std::size_t>(s);
        if (expected != p.data.size()) {
            throw std::runtime_error("circuit container: parameter blob size mismatch");
        }
        c.add_param(std::move(p));
    }
    for (const auto& jl : j["layers"]) {
        Layer l;
        l.kind = kind_from(jl["kind"].get<std::string>());
        l.scope = Scope(jl["scope"].get<std::vector<int>>());
        l.width = jl["width"].get<int>();
        l.inputs = jl["inputs"].get<std::vector<int>>();
        if (l.kind == LayerKind::Input) {
            l.family = family_from_string(jl["family"].get<std::string>());
            l.categories = jl["categories"].get<int>();
            l.binomial_n = jl["binomial_n"].get<int>();
        }
        if (l.kind == LayerKind::Sum) {
            l.structure = structure_from(jl["structure"].get<std::string>());
            l.diag_blocks = jl["blocks"].get<int>();
        }
        l.param = jl.value("param", -1);
        c.add_layer(std::move(l));
    }
    c.set_output(j["output"].get<int>());
    if (j.contains("blocks")) {
        for (const auto& jb : j["blocks"]) {
            BlockRecord b;
            b.kind = block_kind_from_string(jb["kind"].get<std::string>());
            b.layer_ids = jb["layers"].get<std::vector<int>>();
            b.output_layer = jb["output"].get<int>();
            c.blocks().push_back(std::move(b));
        }
    }
    auto violations = c.validate();
    if (!violations.empty()) {
        throw std::runtime_error("circuit container: invalid circuit: " + violations.front());
    }
    return c;
}

}  // namespace

std::string circuit_to_json(const Circuit& c) { return circuit_to_json_object(c).dump(); }

Circuit circuit_from_json(const std::string& text) {
    return circuit_from_json_object(nlohmann::json::parse(text));
}

void save_circuit(const Circuit& c, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_circuit: cannot open " + path);
    os << circuit_to_json_object(c).dump(1);
}

Circuit load_circuit(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_circuit: cannot open " + path);
    nlohmann::json j;
    is >> j;
    return circuit_from_json_object(j);
}

void save_folded(const FoldedCircuit& fc, const std::string& path) {
    nlohmann::json j = circuit_to_json_object(fc.base());
    nlohmann::json groups = nlohmann::json::array();
    for (const FoldGroup& g : fc.groups()) {
        nlohmann::json jg;
        jg["kind"] = kind_name(g.kind);
        jg["members"] = g.members;
        nlohmann::json routing = nlohmann::json::array();
        for (const auto& route : g.routing) {
            nlohmann::json jr = nlohmann::json::array();
            for (auto [group, fold_idx] : route) {
                jr.push_back(nlohmann::json::array({group, fold_idx}));
            }
            routing.push_back(std::move(jr));
        }
        jg["routing"] = std::move(routing);
        groups.push_back(std::move(jg));
    }
    j["fold_groups"] = std::move(groups);
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_folded: cannot open " + path);
    os << j.dump(1);
}

FoldedCircuit load_folded(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_folded: cannot open " + path);
    nlohmann::json j;
    is >> j;
    Circuit base = circuit_from_json_object(j);
    if (!j.contains("fold_groups")) {
        throw std::runtime_error("load_folded: file carries no fold groups");
    }
    std::vector<FoldGroup> groups;
    for (const auto& jg : j["fold_groups"]) {
        FoldGroup g;
        g.kind = kind_from(jg["kind"].get<std::string>());
        g.members = jg["members"].get<std::vector<int>>();
        for (const auto& jr : jg["routing"]) {
            std::vector<std::pair<int, int>> route;
            for (const auto& pair : jr) {
                route.emplace_back(pair[0].get<int>(), pair[1].get<int>());
            }
            g.routing.push_back(std::move(route));
        }
        groups.push_back(std::move(g));
    }
    return FoldedCircuit(std::move(base), std::move(groups));
}

}  // namespace tenscirc
