#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace icegraph {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A line does not match either statement form. Carries the byte offset of
// the first offending character within the line.
struct GrammarError : Error {
    GrammarError(const std::string& what, std::size_t offset) : Error(what), offset(offset) {}
    std::size_t offset;
};

// The statement list produces a directed cycle.
struct CycleError : Error {
    using Error::Error;
};

// Serialized data violates the schema or a structural invariant.
struct SchemaError : Error {
    explicit SchemaError(const std::string& what) : Error(what), line(0) {}
    SchemaError(const std::string& what, std::size_t line)
        : Error(what + " (line " + std::to_string(line) + ")"), line(line) {}
    std::size_t line;
};

struct ShapeError : Error {
    using Error::Error;
};

struct DimensionError : Error {
    using Error::Error;
};

// X^T Z is numerically zero; no meaningful singular pair exists.
struct DegenerateError : Error {
    using Error::Error;
};

struct EmptyGraphError : Error {
    using Error::Error;
};

struct EmptyInputError : Error {
    using Error::Error;
};

struct EmptyIndexError : Error {
    using Error::Error;
};

// A remote call failed after exhausting retries.
struct TransportError : Error {
    using Error::Error;
};

struct TemplateError : Error {
    using Error::Error;
};

struct ExtractionError : Error {
    using Error::Error;
};

// A persisted index was built under a different embedder/aggregation config.
struct ConfigMismatchError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace icegraph
