#pragma once

#include <stdexcept>
#include <string>

namespace fsm {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct GraphError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct StatsError : Error { using Error::Error; };
struct SelectionError : Error { using Error::Error; };
struct CalibrationError : Error { using Error::Error; };
struct StructureError : Error { using Error::Error; };
struct TrainError : Error { using Error::Error; };

}  // namespace fsm
