#pragma once

#include <stdexcept>
#include <string>

namespace bppn {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation requires.
struct ShapeError : Error {
    using Error::Error;
};

// A hyper-parameter or config value is outside its valid range.
struct ConfigError : Error {
    using Error::Error;
};

// Non-finite value produced where finiteness is an invariant.
struct NumericError : Error {
    using Error::Error;
};

// Malformed file; message carries file name and byte offset.
struct ParseError : Error {
    using Error::Error;
};

// Structurally valid file whose contents violate dataset rules.
struct ValidationError : Error {
    using Error::Error;
};

// Greedy prototype selection ran out of distinct images.
struct InsufficientImagesError : Error {
    using Error::Error;
};

// Explanation requested before any prototype push recorded provenance.
struct MissingProvenanceError : Error {
    using Error::Error;
};

// Metric undefined for the given input (single-class AUC, zero-vector cosine).
struct MetricError : Error {
    using Error::Error;
};

}  // namespace bppn
