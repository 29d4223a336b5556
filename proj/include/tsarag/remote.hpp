#pragma once

#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "tsarag/error.hpp"
#include "tsarag/matrix.hpp"
#include "tsarag/task.hpp"

namespace tsarag::remote {

inline constexpr const char* kModelUrlEnv = "TSARAG_MODEL_URL";

struct Endpoint {
    std::string origin;     // scheme://host[:port]
    std::string base_path;  // without trailing slash
};

/// Splits "http://host:port/base" into origin and path. Only http is supported.
inline Endpoint parse_endpoint(const std::string& url) {
    const std::string scheme = "http://";
    if (url.rfind(scheme, 0) != 0 || url.size() == scheme.size()) {
        detail::fail(ErrorKind::InvalidArgument, "model endpoint must look like http://host[:port][/path], got '" +
                                                     url + "'");
    }
    const auto slash = url.find('/', scheme.size());
    Endpoint ep;
    ep.origin = url.substr(0, slash);
    ep.base_path = slash == std::string::npos ? "" : url.substr(slash);
    while (!ep.base_path.empty() && ep.base_path.back() == '/') {
        ep.base_path.pop_back();
    }
    return ep;
}

/// --model-url wins over the environment variable.
inline std::optional<std::string> resolve_model_url(const std::optional<std::string>& flag) {
    if (flag && !flag->empty()) {
        return flag;
    }
    if (const char* env = std::getenv(kModelUrlEnv); env != nullptr && *env != '\0') {
        return std::string(env);
    }
    return std::nullopt;
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
    auto rows = nlohmann::json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
    }
    return rows;
}

inline nlohmann::json build_request(TaskKind task, const Matrix& window, const Matrix* mask, std::size_t horizon) {
    nlohmann::json body;
    body["task"] = std::string(wire_name(task));
    body["window"] = matrix_to_json(window);
    body["mask"] = mask != nullptr ? matrix_to_json(*mask) : nlohmann::json(nullptr);
    body["horizon"] = horizon;
    return body;
}

/// Rows expected back: one per series, or a single label row for classify.
inline std::size_t expected_rows(TaskKind task, const Matrix& window) {
    return task == TaskKind::Classify ? 1 : window.rows();
}

inline Matrix parse_prediction(const std::string& body, std::size_t rows, std::size_t cols) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        detail::fail(ErrorKind::MalformedResponse, std::string("response is not JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("prediction") || !doc["prediction"].is_array()) {
        detail::fail(ErrorKind::MalformedResponse, "response lacks a 'prediction' array");
    }
    const auto& pred = doc["prediction"];
    std::vector<std::vector<double>> parsed;
    for (const auto& row : pred) {
        if (!row.is_array()) {
            detail::fail(ErrorKind::MalformedResponse, "'prediction' must be an array of arrays");
        }
        std::vector<double> values;
        for (const auto& v : row) {
            if (!v.is_number()) {
                detail::fail(ErrorKind::MalformedResponse, "'prediction' entries must be numbers");
            }
            values.push_back(v.get<double>());
        }
        parsed.push_back(std::move(values));
    }
    bool shape_ok = parsed.size() == rows;
    for (const auto& r : parsed) {
        shape_ok = shape_ok && r.size() == cols;
    }
    if (!shape_ok) {
        detail::fail(ErrorKind::ShapeMismatch, "remote prediction does not have shape " + std::to_string(rows) + "×" +
                                                   std::to_string(cols));
    }
    return Matrix::from_rows(parsed);
}

/// POSTs one window to <endpoint>/predict and returns the prediction matrix.
/// Connection failures are retried until `timeout` elapses, then reported
/// as Timeout, so an unreachable endpoint always costs the full timeout.
inline Matrix remote_predict(const std::string& endpoint, TaskKind task, const Matrix& window, const Matrix* mask,
                             std::size_t horizon, std::chrono::milliseconds timeout) {
    const Endpoint ep = parse_endpoint(endpoint);
    const std::string body = build_request(task, window, mask, horizon).dump();
    const auto deadline = std::chrono::steady_clock::now() + timeout;

    while (true) {
        const auto remaining =
            std::chrono::duration_cast<std::chrono::microseconds>(deadline - std::chrono::steady_clock::now());
        if (remaining.count() <= 0) {
            detail::fail(ErrorKind::Timeout, "no response from " + endpoint + " within " +
                                                 std::to_string(timeout.count()) + " ms");
        }
        httplib::Client client(ep.origin);
        client.set_connection_timeout(remaining);
        client.set_read_timeout(remaining);
        client.set_write_timeout(remaining);
        auto res = client.Post(ep.base_path + "/predict", body, "application/json");
        if (!res) {
            if (res.error() == httplib::Error::Connection) {
                std::this_thread::sleep_for(std::min(
                    std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::milliseconds(20)), remaining));
                continue;
            }
            if (res.error() == httplib::Error::Read || res.error() == httplib::Error::Write ||
                res.error() == httplib::Error::ConnectionTimeout) {
                detail::fail(ErrorKind::Timeout, "request to " + endpoint + " timed out (" +
                                                     httplib::to_string(res.error()) + ")");
            }
            detail::fail(ErrorKind::Timeout, "request to " + endpoint + " failed: " + httplib::to_string(res.error()));
        }
        if (res->status != 200) {
            detail::fail(ErrorKind::BadStatus, "model server answered HTTP " + std::to_string(res->status));
        }
        return parse_prediction(res->body, expected_rows(task, window), horizon);
    }
}

}  // namespace tsarag::remote
