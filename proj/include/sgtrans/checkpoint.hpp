#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "sgtrans/config.hpp"
#include "sgtrans/model.hpp"

namespace sgtrans {

inline constexpr const char* checkpoint_magic = "SGTRANS1";

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw io_error("checkpoint truncated while reading u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32(out, bits);
}

inline float read_f32(std::istream& in) {
    std::uint32_t bits = read_u32(in);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline std::string read_line_or_throw(std::istream& in, const char* what) {
    std::string line;
    if (!std::getline(in, line)) throw io_error(std::string("checkpoint truncated in ") + what);
    return line;
}

}  // namespace detail

template <typename Real>
void save_checkpoint(const model<Real>& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write checkpoint " + path);
    out << checkpoint_magic << "\n";

    const model_config& c = m.cfg;
    out << "l_enc=" << c.l_enc << "\n";
    out << "l_dec=" << c.l_dec << "\n";
    out << "h=" << c.h << "\n";
    out << "d_model=" << c.d_model << "\n";
    out << "d_ff=" << c.d_ff << "\n";
    out << "vocab_size=" << c.vocab_size << "\n";
    out << "max_src_len=" << c.max_src_len << "\n";
    out << "max_tgt_len=" << c.max_tgt_len << "\n";
    out << "mu=" << detail::fmt_double(c.mu) << "\n";
    out << "k=" << c.k << "\n";
    out << "dropout_p=" << detail::fmt_double(c.dropout_p) << "\n";
    out << "share_src_tgt_embeddings=" << (c.share_src_tgt_embeddings ? "true" : "false")
        << "\n";
    out << "dataflow_elementwise=" << (c.dataflow_elementwise ? "true" : "false") << "\n";
    out << "end\n";

    out << "vocab " << m.vb.size() << "\n";
    for (const auto& tok : m.vb.tokens()) {
        detail::write_u32(out, static_cast<std::uint32_t>(tok.size()));
        out.write(tok.data(), static_cast<std::streamsize>(tok.size()));
    }

    out << "params " << m.params.items.size() << "\n";
    for (const auto& [name, t] : m.params.items) {
        detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u32(out, static_cast<std::uint32_t>(t.rows()));
        detail::write_u32(out, static_cast<std::uint32_t>(t.cols()));
        for (Real v : t.values()) detail::write_f32(out, static_cast<float>(v));
    }
    if (!out) throw io_error("short write to checkpoint " + path);
}

template <typename Real = float>
model<Real> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint " + path);

    std::string line = detail::read_line_or_throw(in, "magic");
    if (line != checkpoint_magic)
        throw io_error("checkpoint " + path + " has bad magic '" + line + "'");

    run_config rc;
    while (true) {
        line = detail::read_line_or_throw(in, "config header");
        if (line == "end") break;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw io_error("checkpoint config line '" + line + "' is not key=value");
        rc.set(line.substr(0, eq), line.substr(eq + 1));
    }

    line = detail::read_line_or_throw(in, "vocab header");
    if (line.rfind("vocab ", 0) != 0) throw io_error("checkpoint missing vocab section");
    size_t vocab_count = std::stoull(line.substr(6));
    std::vector<std::string> toks(vocab_count);
    for (auto& tok : toks) {
        std::uint32_t len = detail::read_u32(in);
        tok.resize(len);
        in.read(tok.data(), static_cast<std::streamsize>(len));
        if (!in) throw io_error("checkpoint truncated in vocab token");
    }
    vocab vb = vocab::from_tokens(toks);
    if (static_cast<int>(vb.size()) != rc.model.vocab_size)
        throw io_error("checkpoint vocab size does not match config");

    rng dummy(0);
    model<Real> m = model<Real>::create(rc.model, vb, dummy);

    line = detail::read_line_or_throw(in, "params header");
    if (line.rfind("params ", 0) != 0) throw io_error("checkpoint missing params section");
    size_t param_count = std::stoull(line.substr(7));
    if (param_count != m.params.items.size())
        throw io_error("checkpoint has " + std::to_string(param_count) +
                       " parameters, model expects " +
                       std::to_string(m.params.items.size()));

    for (size_t i = 0; i < param_count; ++i) {
        std::uint32_t name_len = detail::read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!in) throw io_error("checkpoint truncated in param name");
        std::uint32_t rows = detail::read_u32(in);
        std::uint32_t cols = detail::read_u32(in);
        tensor<Real>* t = m.params.find(name);
        if (!t) throw io_error("checkpoint has unknown parameter '" + name + "'");
        if (t->rows() != rows || t->cols() != cols)
            throw io_error("checkpoint parameter '" + name + "' has shape [" +
                           std::to_string(rows) + "x" + std::to_string(cols) +
                           "], model expects " + shape_str({t->rows(), t->cols()}));
        auto& vals = t->mut_values();
        for (auto& v : vals) v = static_cast<Real>(detail::read_f32(in));
    }
    return m;
}

}  // namespace sgtrans
