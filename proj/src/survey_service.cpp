#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "lapsynth/errors.hpp"
#include "lapsynth/rng.hpp"
#include "lapsynth/survey.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace lapsynth {

namespace {

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[40];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

void reply_error(httplib::Response& res, int status, const std::string& reason) {
    res.status = status;
    res.set_content(nlohmann::json{{"error", reason}}.dump(), "application/json");
}

}  // namespace

struct SurveyService::Impl {
    SurveyPool pool;
    SurveyServiceConfig config;
    httplib::Server server;
    std::thread thread;

    std::mutex mutex;
    int log_fd = -1;
    std::vector<SurveyResponse> responses;
    std::map<std::string, std::set<std::string>> answered;
    // Opaque served ids, so neither the id nor the URL of an image shows its source.
    std::map<std::string, std::string> served_id;
    std::map<std::string, std::string> pool_id;

    Impl(SurveyPool p, SurveyServiceConfig c) : pool(std::move(p)), config(std::move(c)) {
        if (pool.questions.empty()) throw ArgumentError("survey pool is empty");
        if (config.log_path.empty()) throw ArgumentError("response log path is required");
        for (const auto& [id, path] : pool.images) {
            char hex[17];
            std::snprintf(hex, sizeof hex, "%016llx",
                          static_cast<unsigned long long>(derive_seed(config.order_seed, "survey-image:" + id)));
            if (!pool_id.emplace(hex, id).second) throw ArgumentError("served image id collision for '" + id + "'");
            served_id[id] = hex;
        }
        if (std::filesystem::exists(config.log_path))
            for (auto& r : read_response_log(config.log_path)) {
                answered[r.participant_id].insert(r.question_id);
                responses.push_back(std::move(r));
            }
        log_fd = ::open(config.log_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
        if (log_fd < 0) throw IoError("cannot open response log " + config.log_path.string() + ": " + std::strerror(errno));
        routes();
    }

    ~Impl() {
        if (log_fd >= 0) ::close(log_fd);
    }

    void append(const std::string& line) {
        const std::string data = line + "\n";
        std::size_t done = 0;
        while (done < data.size()) {
            const auto n = ::write(log_fd, data.data() + done, data.size() - done);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw IoError(std::string("response log write failed: ") + std::strerror(errno));
            }
            done += static_cast<std::size_t>(n);
        }
        if (::fsync(log_fd) != 0) throw IoError(std::string("response log sync failed: ") + std::strerror(errno));
    }

    void routes() {
        server.Get("/api/question", [this](const httplib::Request& req, httplib::Response& res) { get_question(req, res); });
        server.Post("/api/response", [this](const httplib::Request& req, httplib::Response& res) { post_response(req, res); });
        server.Get("/api/results", [this](const httplib::Request& req, httplib::Response& res) { get_results(req, res); });
        server.Get(R"(/images/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) { get_image(req, res); });
    }

    void get_question(const httplib::Request& req, httplib::Response& res) {
        const auto participant = req.get_param_value("participant");
        if (participant.empty()) return reply_error(res, 400, "query parameter 'participant' is required");
        const auto order = participant_order(pool, participant, config.order_seed);
        std::set<std::string> done;
        {
            std::lock_guard lock(mutex);
            if (auto it = answered.find(participant); it != answered.end()) done = it->second;
        }
        nlohmann::json j;
        j["participant"] = participant;
        j["total"] = order.size();
        for (std::size_t k = 0; k < order.size(); ++k) {
            const auto& q = pool.questions[order[k]];
            if (done.count(q.question_id)) continue;
            j["done"] = false;
            j["index"] = k + 1;
            j["question_id"] = q.question_id;
            j["instruction"] = q.instruction;
            j["images"] = nlohmann::json::array();
            for (int i = 0; i < kGridSize; ++i) {
                const auto& id = served_id.at(q.image_ids[static_cast<std::size_t>(i)]);
                j["images"].push_back({{"position", i}, {"id", id}, {"url", "/images/" + id}});
            }
            res.set_content(j.dump(), "application/json");
            return;
        }
        j["done"] = true;
        res.set_content(j.dump(), "application/json");
    }

    void post_response(const httplib::Request& req, httplib::Response& res) {
        SurveyResponse r;
        try {
            const auto j = nlohmann::json::parse(req.body);
            if (!j.is_object()) return reply_error(res, 400, "body must be a JSON object");
            const auto pid = j.contains("participant") ? j.at("participant") : j.value("participant_id", nlohmann::json());
            if (!pid.is_string()) return reply_error(res, 400, "'participant' must be a string");
            if (!j.contains("question_id") || !j.at("question_id").is_string())
                return reply_error(res, 400, "'question_id' must be a string");
            if (!j.contains("selected") || !j.at("selected").is_array()) return reply_error(res, 400, "'selected' must be an array");
            for (const auto& v : j.at("selected")) {
                if (!v.is_number_integer()) return reply_error(res, 400, "'selected' must hold integers");
                r.selected.push_back(v.get<int>());
            }
            r.participant_id = pid.get<std::string>();
            r.question_id = j.at("question_id").get<std::string>();
            validate_response(r);
        } catch (const nlohmann::json::exception& e) {
            return reply_error(res, 400, std::string("malformed JSON: ") + e.what());
        } catch (const ArgumentError& e) {
            return reply_error(res, 400, e.what());
        }
        if (!pool.find(r.question_id)) return reply_error(res, 400, "unknown question '" + r.question_id + "'");
        r.timestamp = utc_timestamp();

        std::lock_guard lock(mutex);
        auto& done = answered[r.participant_id];
        if (done.count(r.question_id)) return reply_error(res, 409, "question already answered by this participant");
        try {
            append(response_to_json_line(r));
        } catch (const IoError& e) {
            return reply_error(res, 500, e.what());
        }
        done.insert(r.question_id);
        responses.push_back(r);
        res.status = 201;
        res.set_content(nlohmann::json{{"status", "stored"}, {"question_id", r.question_id}}.dump(), "application/json");
    }

    void get_results(const httplib::Request& req, httplib::Response& res) {
        if (config.admin_token.empty()) return reply_error(res, 403, "results endpoint is disabled");
        std::string token = req.get_header_value("X-Admin-Token");
        const auto auth = req.get_header_value("Authorization");
        if (token.empty() && auth.rfind("Bearer ", 0) == 0) token = auth.substr(7);
        if (token != config.admin_token) return reply_error(res, 401, "admin token required");
        std::vector<SurveyResponse> snapshot;
        {
            std::lock_guard lock(mutex);
            snapshot = responses;
        }
        try {
            res.set_content(scores_to_json(score(snapshot, pool)), "application/json");
        } catch (const Error& e) {
            reply_error(res, 500, e.what());
        }
    }

    void get_image(const httplib::Request& req, httplib::Response& res) {
        const auto alias = pool_id.find(req.matches[1].str());
        if (alias == pool_id.end()) return reply_error(res, 404, "unknown image");
        const auto it = pool.images.find(alias->second);
        if (it == pool.images.end()) return reply_error(res, 404, "unknown image");
        std::ifstream in(it->second, std::ios::binary);
        if (!in) return reply_error(res, 404, "image file missing");
        std::stringstream buf;
        buf << in.rdbuf();
        res.set_content(buf.str(), "image/png");
    }
};

SurveyService::SurveyService(SurveyPool pool, SurveyServiceConfig config)
    : impl_(std::make_unique<Impl>(std::move(pool), std::move(config))) {}

SurveyService::~SurveyService() { stop(); }

int SurveyService::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0)
        bound = impl_->server.bind_to_any_port(host);
    else if (!impl_->server.bind_to_port(host, port))
        bound = -1;
    if (bound <= 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void SurveyService::run(const std::string& host, int port) {
    if (!impl_->server.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    impl_->server.listen_after_bind();
}

void SurveyService::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace lapsynth
