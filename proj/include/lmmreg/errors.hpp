#ifndef LMMREG_ERRORS_HPP
#define LMMREG_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace lmmreg {

struct EmptyCloud : std::runtime_error {
    explicit EmptyCloud(const std::string& what) : std::runtime_error(what) {}
};

struct DegenerateProblem : std::runtime_error {
    explicit DegenerateProblem(const std::string& what) : std::runtime_error(what) {}
};

struct InvalidInput : std::invalid_argument {
    explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

struct ParseError : std::runtime_error {
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what), offset(offset) {}
    std::size_t offset;  // line number for text input, byte offset for binary
};

struct UnsupportedFormat : std::runtime_error {
    explicit UnsupportedFormat(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct MismatchedM : std::runtime_error {
    explicit MismatchedM(const std::string& what) : std::runtime_error(what) {}
};

struct WouldBeEmpty : std::runtime_error {
    explicit WouldBeEmpty(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace lmmreg

#endif
