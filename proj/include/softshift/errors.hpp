#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace softshift {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
    using Error::Error;
};

struct ShapeMismatch : Error {
    using Error::Error;
};

struct InvalidTemperature : Error {
    using Error::Error;
};

struct InvalidSpec : Error {
    using Error::Error;
};

struct LabelOutOfRange : Error {
    using Error::Error;
};

struct InvalidTargets : Error {
    using Error::Error;
};

struct MissingClassSamples : Error {
    explicit MissingClassSamples(std::size_t class_index)
        : Error("MissingClassSamples(" + std::to_string(class_index) + ")"),
          class_index(class_index) {}
    std::size_t class_index;
};

struct CorruptCheckpoint : Error {
    CorruptCheckpoint(const std::string& what, std::uint64_t byte_offset)
        : Error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
          byte_offset(byte_offset) {}
    std::uint64_t byte_offset;
};

struct CorruptTable : Error {
    using Error::Error;
};

struct CorruptDataset : Error {
    using Error::Error;
};

struct InvalidConfig : Error {
    using Error::Error;
};

struct NonFiniteLoss : Error {
    NonFiniteLoss(std::size_t epoch, std::size_t batch)
        : Error("non-finite loss at epoch " + std::to_string(epoch) +
                ", batch " + std::to_string(batch)),
          epoch(epoch), batch(batch) {}
    std::size_t epoch;
    std::size_t batch;
};

}  // namespace softshift
