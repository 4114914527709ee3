#pragma once

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgtrans {

// Error hierarchy. Every throwing path in the library uses one of these so the
// CLI can map failures onto a single machine-parsable stderr line.
struct error : std::runtime_error {
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

struct shape_mismatch : error {
    explicit shape_mismatch(const std::string& what) : error(what) {}
};

struct unterminated_literal : error {
    int line;
    explicit unterminated_literal(int line_)
        : error("unterminated literal at line " + std::to_string(line_)), line(line_) {}
};

struct invalid_schedule : error {
    explicit invalid_schedule(const std::string& what) : error(what) {}
};

struct non_finite_loss : error {
    explicit non_finite_loss(const std::string& what) : error(what) {}
};

struct empty_input : error {
    explicit empty_input(const std::string& what) : error(what) {}
};

struct config_error : error {
    explicit config_error(const std::string& what) : error(what) {}
};

struct io_error : error {
    explicit io_error(const std::string& what) : error(what) {}
};

enum class language { java, python };

inline std::string to_string(language lang) {
    return lang == language::java ? "java" : "python";
}

inline language language_from_string(const std::string& s) {
    if (s == "java") return language::java;
    if (s == "python") return language::python;
    throw config_error("unknown language '" + s + "' (expected java or python)");
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

}  // namespace sgtrans
