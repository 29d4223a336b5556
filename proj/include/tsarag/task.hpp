#pragma once

#include <array>
#include <string>
#include <string_view>

#include "tsarag/error.hpp"

namespace tsarag {

enum class TaskKind { Forecast, Impute, Anomaly, Classify };

inline constexpr std::array<TaskKind, 4> kAllTasks = {TaskKind::Forecast, TaskKind::Impute, TaskKind::Anomaly,
                                                      TaskKind::Classify};

/// Display name ("Forecast", ...), as printed by `ask` and stored in response.json.
constexpr std::string_view to_string(TaskKind kind) noexcept {
    switch (kind) {
    case TaskKind::Forecast: return "Forecast";
    case TaskKind::Impute: return "Impute";
    case TaskKind::Anomaly: return "Anomaly";
    case TaskKind::Classify: return "Classify";
    }
    return "Forecast";
}

/// Lower-case wire name used by the remote model protocol and the CLI.
constexpr std::string_view wire_name(TaskKind kind) noexcept {
    switch (kind) {
    case TaskKind::Forecast: return "forecast";
    case TaskKind::Impute: return "impute";
    case TaskKind::Anomaly: return "anomaly";
    case TaskKind::Classify: return "classify";
    }
    return "forecast";
}

/// Accepts either the display or the wire name.
inline TaskKind parse_task_kind(std::string_view s) {
    for (TaskKind k : kAllTasks) {
        if (s == to_string(k) || s == wire_name(k)) {
            return k;
        }
    }
    detail::fail(ErrorKind::InvalidArgument, "unknown task kind '" + std::string(s) + "'");
}

}  // namespace tsarag
