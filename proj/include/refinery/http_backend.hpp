#pragma once
// HTTP adapters for remote model endpoints: a chat-style call used by the
// verifier/critic roles and image generation/edit calls for G and E. All
// calls are rate limited per endpoint, retried with exponential backoff on
// transport errors / 429 / 5xx, and carry an idempotency key so a retried
// generate or edit cannot be double-applied server-side.

#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "refinery/backends.hpp"
#include "refinery/core.hpp"
#include "refinery/simenv.hpp"  // mix64 / hash_str for idempotency keys

namespace refinery {

constexpr std::size_t kMaxImagePayloadBytes = 8ull * 1024 * 1024;

// ---------------------------------------------------------------------------
// base64
// ---------------------------------------------------------------------------

inline std::string base64_encode(const std::string& data) {
    static const char* table = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 2 < data.size()) {
        unsigned v = (static_cast<unsigned char>(data[i]) << 16) |
                     (static_cast<unsigned char>(data[i + 1]) << 8) |
                     static_cast<unsigned char>(data[i + 2]);
        out.push_back(table[(v >> 18) & 63]);
        out.push_back(table[(v >> 12) & 63]);
        out.push_back(table[(v >> 6) & 63]);
        out.push_back(table[v & 63]);
        i += 3;
    }
    if (i + 1 == data.size()) {
        unsigned v = static_cast<unsigned char>(data[i]) << 16;
        out.push_back(table[(v >> 18) & 63]);
        out.push_back(table[(v >> 12) & 63]);
        out += "==";
    } else if (i + 2 == data.size()) {
        unsigned v = (static_cast<unsigned char>(data[i]) << 16) |
                     (static_cast<unsigned char>(data[i + 1]) << 8);
        out.push_back(table[(v >> 18) & 63]);
        out.push_back(table[(v >> 12) & 63]);
        out.push_back(table[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

inline std::string base64_decode(const std::string& data) {
    auto value = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::string out;
    int buffer = 0, bits = 0;
    for (char c : data) {
        if (c == '=' || c == '\n' || c == '\r') continue;
        int v = value(c);
        if (v < 0) throw ProtocolError("invalid base64 payload");
        buffer = (buffer << 6) | v;
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<char>((buffer >> bits) & 0xff));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rate limiter: sliding one-minute window, shared per endpoint across
// streams. Calls over the cap are delayed, never dropped. Clock and sleeper
// are injectable so the throttle is testable without wall-clock waits.
// ---------------------------------------------------------------------------

class RateLimiter {
public:
    using TimePoint = std::chrono::steady_clock::time_point;
    using Clock = std::function<TimePoint()>;
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    explicit RateLimiter(int per_minute, Clock clock = nullptr, Sleeper sleeper = nullptr)
        : per_minute_(per_minute),
          clock_(clock ? std::move(clock) : [] { return std::chrono::steady_clock::now(); }),
          sleeper_(sleeper ? std::move(sleeper)
                           : [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {}

    void acquire() {
        if (per_minute_ <= 0) return;
        while (true) {
            std::chrono::milliseconds wait{0};
            {
                std::lock_guard<std::mutex> lock(mu_);
                const TimePoint now = clock_();
                while (!window_.empty() && now - window_.front() >= std::chrono::minutes(1))
                    window_.pop_front();
                if (static_cast<int>(window_.size()) < per_minute_) {
                    window_.push_back(now);
                    return;
                }
                wait = std::chrono::duration_cast<std::chrono::milliseconds>(
                           window_.front() + std::chrono::minutes(1) - now) +
                       std::chrono::milliseconds(1);
            }
            sleeper_(wait);
        }
    }

private:
    int per_minute_;
    Clock clock_;
    Sleeper sleeper_;
    std::mutex mu_;
    std::deque<TimePoint> window_;
};

// ---------------------------------------------------------------------------
// Retrying POST
// ---------------------------------------------------------------------------

namespace http_detail {

inline bool retryable_status(int status) { return status == 429 || status >= 500; }

inline std::string body_excerpt(const std::string& body) {
    return body.size() <= 200 ? body : body.substr(0, 200) + "...";
}

// Splits "http://host:port/some/path" into origin and path.
inline std::pair<std::string, std::string> split_url(const std::string& url) {
    std::size_t scheme = url.find("://");
    if (scheme == std::string::npos) throw ConfigError("URL without scheme: " + url);
    std::size_t path = url.find('/', scheme + 3);
    if (path == std::string::npos) return {url, "/"};
    return {url.substr(0, path), url.substr(path)};
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StorageError("cannot read image file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace http_detail

inline std::string image_content(const ImageRef& ref) {
    if (ref.is_inline()) return ref.bytes;
    if (!ref.path.empty()) return http_detail::read_file_bytes(ref.path);
    throw ProtocolError("empty ImageRef");
}

// POST with auth, rate limiting, retries and backoff. Returns the 2xx body.
inline std::string http_post_json(const EndpointConfig& cfg, const std::string& path,
                                  const nlohmann::json& body, RateLimiter* limiter = nullptr,
                                  const std::string& idempotency_key = "") {
    cfg.validate();
    httplib::Headers headers;
    if (!cfg.auth_env.empty()) {
        if (const char* token = std::getenv(cfg.auth_env.c_str()))
            headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    if (!idempotency_key.empty()) headers.emplace("Idempotency-Key", idempotency_key);

    const std::string payload = body.dump();
    std::string last_error;
    double backoff_ms = cfg.backoff_initial_ms;

    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(static_cast<long long>(backoff_ms)));
            backoff_ms *= cfg.backoff_multiplier;
        }
        if (limiter) limiter->acquire();

        httplib::Client client(cfg.base_url);
        client.set_connection_timeout(std::chrono::duration<double>(cfg.timeout_s));
        client.set_read_timeout(std::chrono::duration<double>(cfg.timeout_s));
        client.set_write_timeout(std::chrono::duration<double>(cfg.timeout_s));

        auto res = client.Post(path, headers, payload, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 200 && res->status < 300) return res->body;
        if (http_detail::retryable_status(res->status)) {
            last_error = "status " + std::to_string(res->status);
            continue;
        }
        throw BackendRejected("endpoint " + cfg.base_url + path + " rejected with status " +
                              std::to_string(res->status) + ": " +
                              http_detail::body_excerpt(res->body));
    }
    throw BackendUnavailable("endpoint " + cfg.base_url + path + " unavailable after " +
                             std::to_string(cfg.max_retries + 1) + " attempts (" + last_error +
                             ")");
}

// ---------------------------------------------------------------------------
// Chat call: POST {model, messages:[{role, content:[{type:"text"|"image"}]}]}
// -> model completion text.
// ---------------------------------------------------------------------------

inline std::string http_chat_call(const EndpointConfig& cfg, const std::string& system_text,
                                  const std::string& user_text,
                                  const std::vector<ImageRef>& images,
                                  RateLimiter* limiter = nullptr) {
    nlohmann::json messages = nlohmann::json::array();
    if (!system_text.empty())
        messages.push_back({{"role", "system"},
                            {"content", nlohmann::json::array(
                                            {{{"type", "text"}, {"text", system_text}}})}});
    nlohmann::json user_content = nlohmann::json::array();
    user_content.push_back({{"type", "text"}, {"text", user_text}});
    for (const auto& image : images) {
        const std::string content = image_content(image);
        if (content.size() > kMaxImagePayloadBytes)
            throw BackendRejected("image payload exceeds " +
                                  std::to_string(kMaxImagePayloadBytes) + " bytes");
        user_content.push_back({{"type", "image"},
                                {"media_type",
                                 image.media_type.empty() ? "image/png" : image.media_type},
                                {"data", base64_encode(content)}});
    }
    messages.push_back({{"role", "user"}, {"content", std::move(user_content)}});

    const std::string body = http_post_json(
        cfg, cfg.chat_path, nlohmann::json{{"model", cfg.model}, {"messages", messages}},
        limiter);

    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception&) {
        throw ProtocolError("chat endpoint returned non-JSON body: " +
                            http_detail::body_excerpt(body));
    }
    if (parsed.contains("choices") && parsed["choices"].is_array() &&
        !parsed["choices"].empty()) {
        const auto& message = parsed["choices"][0].contains("message")
                                  ? parsed["choices"][0]["message"]
                                  : parsed["choices"][0];
        if (message.contains("content")) {
            const auto& content = message["content"];
            if (content.is_string()) return content.get<std::string>();
            if (content.is_array()) {
                std::string text;
                for (const auto& part : content)
                    if (part.value("type", "text") == "text") text += part.value("text", "");
                return text;
            }
        }
    }
    if (parsed.contains("content") && parsed["content"].is_string())
        return parsed["content"].get<std::string>();
    if (parsed.contains("text") && parsed["text"].is_string())
        return parsed["text"].get<std::string>();
    throw ProtocolError("chat response carries no completion text: " +
                        http_detail::body_excerpt(body));
}

inline ChatFn make_chat_fn(EndpointConfig cfg, std::shared_ptr<RateLimiter> limiter = nullptr) {
    return [cfg, limiter](const std::string& system_text, const std::string& user_text,
                          const std::vector<ImageRef>& images) {
        return http_chat_call(cfg, system_text, user_text, images, limiter.get());
    };
}

// ---------------------------------------------------------------------------
// Image endpoints: POST {model, prompt[, image][, seed]} -> {data:[{b64|url}]}
// ---------------------------------------------------------------------------

namespace http_detail {

inline ImageRef decode_image_response(const EndpointConfig& cfg, const std::string& body) {
    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception&) {
        throw ProtocolError("image endpoint returned non-JSON body: " + body_excerpt(body));
    }
    if (!parsed.contains("data") || !parsed["data"].is_array() || parsed["data"].empty())
        throw ProtocolError("image response has no data array: " + body_excerpt(body));
    const auto& item = parsed["data"][0];

    ImageRef ref;
    ref.media_type = item.value("media_type", "image/png");
    if (item.contains("b64") || item.contains("b64_json")) {
        ref.bytes = base64_decode(item.contains("b64") ? item["b64"].get<std::string>()
                                                       : item["b64_json"].get<std::string>());
        return ref;
    }
    if (item.contains("url")) {
        auto [origin, path] = split_url(item["url"].get<std::string>());
        httplib::Client client(origin);
        client.set_read_timeout(std::chrono::duration<double>(cfg.timeout_s));
        auto res = client.Get(path);
        if (!res || res->status < 200 || res->status >= 300)
            throw BackendUnavailable("image URL fetch failed: " +
                                     item["url"].get<std::string>());
        ref.bytes = res->body;
        if (res->has_header("Content-Type")) ref.media_type = res->get_header_value("Content-Type");
        return ref;
    }
    throw ProtocolError("image response item has neither b64 nor url: " + body_excerpt(body));
}

}  // namespace http_detail

inline ImageRef http_generate(const EndpointConfig& cfg, const std::string& prompt_text,
                              RateLimiter* limiter = nullptr, std::uint64_t seed = 0) {
    if (prompt_text.empty()) throw BackendRejected("empty generation prompt");
    nlohmann::json body{{"model", cfg.model}, {"prompt", prompt_text}};
    if (seed) body["seed"] = seed;
    const std::string key =
        "gen-" + std::to_string(mix64(hash_str(prompt_text), seed, hash_str(cfg.model)));
    return http_detail::decode_image_response(
        cfg, http_post_json(cfg, cfg.image_path, body, limiter, key));
}

inline ImageRef http_edit(const EndpointConfig& cfg, const ImageRef& base,
                          const std::string& instruction, RateLimiter* limiter = nullptr,
                          std::uint64_t seed = 0) {
    if (instruction.empty()) throw BackendRejected("empty edit instruction");
    const std::string content = image_content(base);
    if (content.size() > kMaxImagePayloadBytes)
        throw BackendRejected("image payload exceeds " + std::to_string(kMaxImagePayloadBytes) +
                              " bytes");
    nlohmann::json body{{"model", cfg.model},
                        {"prompt", instruction},
                        {"image", base64_encode(content)}};
    if (seed) body["seed"] = seed;
    const std::string key = "edit-" + std::to_string(mix64(hash_str(instruction), seed,
                                                           hash_str(content)));
    return http_detail::decode_image_response(
        cfg, http_post_json(cfg, cfg.image_path, body, limiter, key));
}

// ---------------------------------------------------------------------------
// Role adapters
// ---------------------------------------------------------------------------

class HttpGenerator final : public GeneratorIface {
public:
    HttpGenerator(EndpointConfig cfg, std::shared_ptr<RateLimiter> limiter = nullptr)
        : cfg_(std::move(cfg)), limiter_(std::move(limiter)) {}

    ImageRef generate(const std::string& prompt_text, const std::string& sub_prompt,
                      std::uint64_t seed) override {
        const std::string prompt =
            sub_prompt.empty() ? prompt_text : prompt_text + "\n" + sub_prompt;
        return http_generate(cfg_, prompt, limiter_.get(), seed);
    }

private:
    EndpointConfig cfg_;
    std::shared_ptr<RateLimiter> limiter_;
};

class HttpEditor final : public EditorIface {
public:
    HttpEditor(EndpointConfig cfg, std::shared_ptr<RateLimiter> limiter = nullptr)
        : cfg_(std::move(cfg)), limiter_(std::move(limiter)) {}

    ImageRef edit(const ImageRef& base, const std::string& instruction,
                  std::uint64_t seed) override {
        return http_edit(cfg_, base, instruction, limiter_.get(), seed);
    }

private:
    EndpointConfig cfg_;
    std::shared_ptr<RateLimiter> limiter_;
};

}  // namespace refinery
