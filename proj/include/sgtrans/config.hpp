#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sgtrans/common.hpp"

namespace sgtrans {

struct model_config {
    int l_enc = 2;
    int l_dec = 2;
    int h = 4;
    int d_model = 64;
    int d_ff = 128;
    int vocab_size = 0;  // filled in after vocabulary construction
    int max_src_len = 400;
    int max_tgt_len = 30;
    double mu = 5.0;
    int k = 2;  // head schedule boundary layer, >= l_enc
    double dropout_p = 0.2;
    bool share_src_tgt_embeddings = false;
    bool dataflow_elementwise = false;

    int d() const { return d_model / h; }

    void validate() const {
        if (l_enc < 1 || l_dec < 1) throw config_error("layer counts must be >= 1");
        if (h < 1) throw config_error("h must be >= 1");
        if (d_model % h != 0)
            throw config_error("d_model " + std::to_string(d_model) +
                               " not divisible by h " + std::to_string(h));
        if (mu < 0.0) throw config_error("mu must be >= 0");
        if (k < l_enc)
            throw config_error("k " + std::to_string(k) + " must be >= l_enc " +
                               std::to_string(l_enc));
        if (d_ff < 1) throw config_error("d_ff must be >= 1");
        if (max_src_len < 1 || max_tgt_len < 1)
            throw config_error("sequence length limits must be >= 1");
        if (dropout_p < 0.0 || dropout_p >= 1.0)
            throw config_error("dropout_p must be in [0,1)");
    }
};

struct train_config {
    double lr = 1e-4;
    int batch_size = 32;
    int max_epochs = 200;
    int patience = 20;
    std::uint64_t seed = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip_norm = 0.0;  // 0 disables clipping; 5 is the usual value
    int repeat = 1;

    void validate() const {
        if (lr <= 0.0) throw config_error("lr must be > 0");
        if (batch_size < 1) throw config_error("batch_size must be >= 1");
        if (max_epochs < 1) throw config_error("max_epochs must be >= 1");
        if (patience < 1) throw config_error("patience must be >= 1");
        if (grad_clip_norm < 0.0) throw config_error("grad_clip_norm must be >= 0");
        if (repeat < 1) throw config_error("repeat must be >= 1");
    }
};

// flat key=value run configuration covering both structs. '#' starts a
// comment; blank lines are ignored; unknown keys are an error.
struct run_config {
    model_config model;
    train_config train;
    std::string source_text;  // verbatim bytes of the parsed file, for echoing

    static bool parse_bool(const std::string& key, const std::string& val) {
        if (val == "true" || val == "1") return true;
        if (val == "false" || val == "0") return false;
        throw config_error("key " + key + " expects a boolean, got '" + val + "'");
    }

    void set(const std::string& key, const std::string& val) {
        try {
            if (key == "l_enc") model.l_enc = std::stoi(val);
            else if (key == "l_dec") model.l_dec = std::stoi(val);
            else if (key == "h") model.h = std::stoi(val);
            else if (key == "d_model") model.d_model = std::stoi(val);
            else if (key == "d_ff") model.d_ff = std::stoi(val);
            else if (key == "vocab_size") model.vocab_size = std::stoi(val);
            else if (key == "max_src_len") model.max_src_len = std::stoi(val);
            else if (key == "max_tgt_len") model.max_tgt_len = std::stoi(val);
            else if (key == "mu") model.mu = std::stod(val);
            else if (key == "k") model.k = std::stoi(val);
            else if (key == "dropout_p") model.dropout_p = std::stod(val);
            else if (key == "share_src_tgt_embeddings")
                model.share_src_tgt_embeddings = parse_bool(key, val);
            else if (key == "dataflow_elementwise")
                model.dataflow_elementwise = parse_bool(key, val);
            else if (key == "lr") train.lr = std::stod(val);
            else if (key == "batch_size") train.batch_size = std::stoi(val);
            else if (key == "max_epochs") train.max_epochs = std::stoi(val);
            else if (key == "patience") train.patience = std::stoi(val);
            else if (key == "seed") train.seed = std::stoull(val);
            else if (key == "beta1") train.beta1 = std::stod(val);
            else if (key == "beta2") train.beta2 = std::stod(val);
            else if (key == "eps") train.eps = std::stod(val);
            else if (key == "grad_clip_norm") train.grad_clip_norm = std::stod(val);
            else if (key == "repeat") train.repeat = std::stoi(val);
            else throw config_error("unknown config key '" + key + "'");
        } catch (const config_error&) {
            throw;
        } catch (const std::exception&) {
            throw config_error("bad value '" + val + "' for key " + key);
        }
    }

    static run_config parse_text(const std::string& text) {
        run_config rc;
        rc.source_text = text;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto trim = [](std::string s) {
                size_t b = s.find_first_not_of(" \t\r");
                if (b == std::string::npos) return std::string();
                size_t e = s.find_last_not_of(" \t\r");
                return s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw config_error("config line " + std::to_string(lineno) +
                                   " is not key=value: '" + line + "'");
            std::string key = trim(line.substr(0, eq));
            std::string val = trim(line.substr(eq + 1));
            if (key.empty()) throw config_error("config line " + std::to_string(lineno) +
                                                " has an empty key");
            rc.set(key, val);
        }
        return rc;
    }

    static run_config parse_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw io_error("cannot open config file " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_text(buf.str());
    }
};

}  // namespace sgtrans
